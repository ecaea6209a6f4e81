"""Wave-packet state labels and the algebra of terminating function sequences.

Momentum-space values are only ever read on the mass shells, so a packet is
evaluated through ``value(sign, p)``: the function at ``E = sign * omega(p)``.
Units have hbar = c = 1 and the Minkowski metric is (+, -, -, -).
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

MAX_RAPIDITY = 3.0
METRIC = np.diag([1.0, -1.0, -1.0, -1.0])

# on-shell multipliers applied to the Gaussian profile
SHELL_FULL = "full"          # both shells, value independent of the energy sign
SHELL_LIFT = "lift"          # (E + omega): 2 omega on the positive shell, 0 on the negative
SHELL_POSITIVE = "positive"  # (omega + E) / (2 omega)
SHELL_NEGATIVE = "negative"  # (omega - E) / (2 omega)
_SHELL_MODES = (SHELL_FULL, SHELL_LIFT, SHELL_POSITIVE, SHELL_NEGATIVE)


@dataclass(frozen=True)
class Kinematics:
    mass: float = 1.0

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")

    def omega(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return np.sqrt(self.mass**2 + np.sum(p * p, axis=-1))


def _omega(mass: float, p: np.ndarray) -> np.ndarray:
    return np.sqrt(mass * mass + np.sum(p * p, axis=-1))


# -- Lorentz transformations ----------------------------------------------

def rotation(axis: Sequence[float], angle: float) -> np.ndarray:
    """4x4 spatial rotation by ``angle`` about ``axis`` (Rodrigues)."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    r = np.eye(3) + math.sin(angle) * kx + (1 - math.cos(angle)) * kx @ kx
    out = np.eye(4)
    out[1:, 1:] = r
    return out


def boost(direction: Sequence[float], rapidity: float) -> np.ndarray:
    """4x4 pure boost along ``direction``."""
    n = np.asarray(direction, dtype=float)
    n = n / np.linalg.norm(n)
    ch, sh = math.cosh(rapidity), math.sinh(rapidity)
    out = np.eye(4)
    out[0, 0] = ch
    out[0, 1:] = sh * n
    out[1:, 0] = sh * n
    out[1:, 1:] += (ch - 1) * np.outer(n, n)
    return out


def validate_lorentz(lam, max_rapidity: float = MAX_RAPIDITY, atol: float = 1e-10) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (4, 4):
        raise ValueError("Lorentz matrix must be 4x4")
    if not np.allclose(lam.T @ METRIC @ lam, METRIC, atol=atol * max(1.0, np.abs(lam).max() ** 2)):
        raise ValueError("matrix does not preserve the Minkowski metric")
    if lam[0, 0] < 1 - atol:
        raise ValueError("transformation is not orthochronous")
    if np.linalg.det(lam) < 0:
        raise ValueError("transformation is not proper")
    if math.acosh(max(1.0, lam[0, 0])) > max_rapidity + atol:
        raise ValueError(f"rapidity exceeds the configured bound {max_rapidity}")
    return lam


def _as_tuple4x4(lam: np.ndarray) -> tuple:
    return tuple(tuple(float(x) for x in row) for row in lam)


@dataclass(frozen=True)
class PoincareTag:
    """The map ``f(x) -> f(lam^-1 (x - a))``; momentum values pick up ``e^{i p.a}``."""

    a: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    lam: tuple = _as_tuple4x4(np.eye(4))

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.lam, dtype=float)

    @property
    def rapidity(self) -> float:
        return math.acosh(max(1.0, self.lam[0][0]))

    def is_translation(self) -> bool:
        return np.array_equal(self.matrix, np.eye(4))

    def compose_after(self, first: "PoincareTag") -> "PoincareTag":
        """``self o first``: apply ``first``, then ``self``."""
        m = self.matrix
        a = np.asarray(self.a) + m @ np.asarray(first.a)
        return PoincareTag(tuple(float(x) for x in a), _as_tuple4x4(m @ first.matrix))

    def inverse(self) -> "PoincareTag":
        inv = METRIC @ self.matrix.T @ METRIC
        a = -inv @ np.asarray(self.a)
        return PoincareTag(tuple(float(x) for x in a), _as_tuple4x4(inv))


IDENTITY_TAG = PoincareTag()


def make_tag(a=(0.0, 0.0, 0.0, 0.0), lam=None, max_rapidity: float = MAX_RAPIDITY) -> PoincareTag:
    lam = np.eye(4) if lam is None else validate_lorentz(lam, max_rapidity)
    a = tuple(float(x) for x in a)
    if len(a) != 4:
        raise ValueError("translation must be a 4-vector")
    return PoincareTag(a, _as_tuple4x4(lam))


# -- packets --------------------------------------------------------------

@dataclass(frozen=True)
class GaussianPacket:
    """Gaussian profile ``(L/sqrt(pi))^3 exp(-L^2 |p - q|^2)`` with phase ``e^{i omega tau}``.

    ``starred`` marks the image under the star map: its value at ``(s, p)`` is
    the conjugate of the unstarred twin's value at ``(-s, -p)``.
    """

    center: tuple[float, float, float]
    width: float
    tau: float = 0.0
    mass: float = 1.0
    transform: PoincareTag | None = None
    shell: str = SHELL_FULL
    starred: bool = False

    def __post_init__(self):
        if len(self.center) != 3:
            raise ValueError("center must be a 3-vector")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.width > 0:
            raise ValueError("width must be positive")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if self.shell not in _SHELL_MODES:
            raise ValueError(f"unknown shell mode {self.shell!r}")

    @property
    def lifted(self) -> bool:
        return self.shell == SHELL_LIFT

    @property
    def sign(self) -> int:
        """The shell sign the kernels read this factor on: -1 when starred."""
        return -1 if self.starred else 1

    def twin(self) -> "GaussianPacket":
        return replace(self, starred=False)

    def profile(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        d = p - np.asarray(self.center)
        norm = (self.width / math.sqrt(math.pi)) ** 3
        return norm * np.exp(-self.width**2 * np.sum(d * d, axis=-1))

    def _base_value(self, sign: int, p: np.ndarray) -> np.ndarray:
        w = _omega(self.mass, p)
        val = self.profile(p) * np.exp(1j * w * self.tau)
        if self.shell == SHELL_LIFT:
            return val * (2 * w) if sign > 0 else np.zeros_like(val)
        if self.shell == SHELL_POSITIVE:
            return val if sign > 0 else np.zeros_like(val)
        if self.shell == SHELL_NEGATIVE:
            return val if sign < 0 else np.zeros_like(val)
        return val

    def value(self, sign: int, p) -> np.ndarray:
        """Momentum-space value at ``E = sign * omega(p)``; ``p`` has shape (..., 3)."""
        if sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        p = np.asarray(p, dtype=float)
        if self.starred:
            return np.conj(self.twin().value(-sign, -p))
        if self.transform is None:
            return self._base_value(sign, p)
        t = self.transform
        e = sign * _omega(self.mass, p)
        four = np.concatenate([e[..., None], p], axis=-1)
        inv = np.linalg.inv(t.matrix)
        back = four @ inv.T
        a = np.asarray(t.a)
        phase = np.exp(1j * (e * a[0] - p @ a[1:]))
        # orthochronous maps keep the energy sign, so only spatial parts are needed
        return phase * self._base_value(sign, back[..., 1:])

    def vanishes_on(self, sign: int) -> bool:
        """Structural zero on the ``sign`` shell (no floating point involved)."""
        own = -sign if self.starred else sign
        return (self.shell in (SHELL_LIFT, SHELL_POSITIVE) and own < 0) or (
            self.shell == SHELL_NEGATIVE and own > 0
        )

    # geometry used to size quadrature grids
    def momentum_center(self) -> np.ndarray:
        """Approximate center of the on-shell support in the lab frame."""
        q = np.asarray(self.center)
        if self.transform is not None and not self.transform.is_translation():
            four = np.concatenate([[math.sqrt(self.mass**2 + q @ q)], q])
            q = (self.transform.matrix @ four)[1:]
        return -q if self.starred else q

    def momentum_spread(self) -> float:
        """Std of the profile per axis, stretched by the boost factor."""
        stretch = math.exp(self.transform.rapidity) if self.transform is not None else 1.0
        return stretch / (self.width * math.sqrt(2.0))

    def focus(self) -> tuple[float, np.ndarray]:
        """Auxiliary time and position around which the packet is localized."""
        t = -self.tau
        x = np.zeros(3)
        if self.transform is not None:
            t -= self.transform.a[0]
            x = -np.asarray(self.transform.a[1:])
        return t, x


def b_lift(phi: GaussianPacket) -> GaussianPacket:
    """Multiply by ``(E + omega)`` so the packet vanishes on the negative shell."""
    if phi.starred:
        raise ValueError("cannot lift a starred packet")
    if phi.shell == SHELL_LIFT:
        raise ValueError("packet is already lifted")
    if phi.shell != SHELL_FULL:
        raise ValueError("only unprojected packets can be lifted")
    return replace(phi, shell=SHELL_LIFT)


def star_packet(phi: GaussianPacket) -> GaussianPacket:
    return replace(phi, starred=not phi.starred)


def transform_packet(phi: GaussianPacket, tag: PoincareTag) -> GaussianPacket:
    if phi.starred:
        # ((a, lam) f)* = (a, lam) f*, so the tag is carried by the twin
        return star_packet(transform_packet(phi.twin(), tag))
    new = tag if phi.transform is None else tag.compose_after(phi.transform)
    if new == IDENTITY_TAG:
        new = None
    return replace(phi, transform=new)


# -- function sequences ---------------------------------------------------

@dataclass(frozen=True)
class TensorTerm:
    coefficient: complex
    factors: tuple[GaussianPacket, ...]

    @property
    def degree(self) -> int:
        return len(self.factors)

    def star(self) -> "TensorTerm":
        return TensorTerm(self.coefficient.conjugate(), tuple(star_packet(f) for f in reversed(self.factors)))

    def value(self, signs: Sequence[int], momenta) -> np.ndarray:
        momenta = np.asarray(momenta, dtype=float)
        out = self.coefficient
        for j, (f, s) in enumerate(zip(self.factors, signs)):
            out = out * f.value(s, momenta[..., j, :])
        return out


def _term_key(t: TensorTerm):
    return (t.degree, repr(t.factors), t.coefficient.real, t.coefficient.imag)


@dataclass(frozen=True)
class FunctionSequence:
    """A terminating sequence ``(f_0, f_1, ...)`` with packet-product components.

    Terms are kept as an ordered list without collecting like terms, so the
    algebra operations involve no floating point beyond coefficient products.
    Equality compares the multiset of terms.
    """

    scalar: complex = 0j
    terms: tuple[TensorTerm, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "scalar", complex(self.scalar))
        object.__setattr__(
            self, "terms", tuple(TensorTerm(complex(t.coefficient), tuple(t.factors)) for t in self.terms if t.coefficient != 0)
        )

    @classmethod
    def unit(cls) -> "FunctionSequence":
        return cls(1 + 0j, ())

    @classmethod
    def product_state(cls, packets: Iterable[GaussianPacket], coefficient: complex = 1.0) -> "FunctionSequence":
        return cls(0j, (TensorTerm(complex(coefficient), tuple(packets)),))

    @property
    def degree(self) -> int:
        return max((t.degree for t in self.terms), default=0)

    def component(self, n: int) -> tuple[TensorTerm, ...]:
        return tuple(t for t in self.terms if t.degree == n)

    def components(self) -> list[tuple[TensorTerm, ...]]:
        return [self.component(n) for n in range(self.degree + 1)]

    def canonical(self) -> tuple:
        return (self.scalar, tuple(sorted(self.terms, key=_term_key)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, FunctionSequence):
            return NotImplemented
        return self.canonical() == other.canonical()

    def __hash__(self) -> int:
        return hash(self.canonical())

    def __add__(self, other: "FunctionSequence") -> "FunctionSequence":
        return FunctionSequence(self.scalar + other.scalar, self.terms + other.terms)

    def scale(self, c: complex) -> "FunctionSequence":
        return FunctionSequence(self.scalar * c, tuple(TensorTerm(c * t.coefficient, t.factors) for t in self.terms))

    def __mul__(self, other: "FunctionSequence") -> "FunctionSequence":
        return seq_product(self, other)

    @property
    def in_B(self) -> bool:
        return all(f.lifted and not f.starred for t in self.terms for f in t.factors)

    def value(self, signs: Sequence[int], momenta) -> np.ndarray:
        """Component ``len(signs)`` evaluated at on-shell momenta of shape (..., n, 3)."""
        n = len(signs)
        if n == 0:
            return np.asarray(self.scalar)
        momenta = np.asarray(momenta, dtype=float)
        out = np.zeros(momenta.shape[:-2], dtype=complex)
        for t in self.component(n):
            out = out + t.value(signs, momenta)
        return out


def seq_product(f: FunctionSequence, g: FunctionSequence) -> FunctionSequence:
    terms: list[TensorTerm] = []
    for t in g.terms:
        terms.append(TensorTerm(f.scalar * t.coefficient, t.factors))
    for s in f.terms:
        terms.append(TensorTerm(s.coefficient * g.scalar, s.factors))
        for t in g.terms:
            terms.append(TensorTerm(s.coefficient * t.coefficient, s.factors + t.factors))
    return FunctionSequence(f.scalar * g.scalar, tuple(terms))


def star(f: FunctionSequence) -> FunctionSequence:
    return FunctionSequence(f.scalar.conjugate(), tuple(t.star() for t in f.terms))


def lsz_packet(q, width: float, tau: float = 0.0, mass: float = 1.0) -> GaussianPacket:
    return b_lift(GaussianPacket(tuple(q), width, tau, mass))


def b_decompose(f: FunctionSequence) -> tuple[FunctionSequence, FunctionSequence]:
    """Split a one-argument packet combination as ``f = g + h*`` with ``g, h``
    vanishing on the negative shell."""
    if f.scalar != 0 or any(t.degree != 1 for t in f.terms):
        raise ValueError("b_decompose takes a single-argument packet combination")
    g_terms, h_terms = [], []
    for t in f.terms:
        (phi,) = t.factors
        if phi.starred or phi.shell != SHELL_FULL:
            raise ValueError("b_decompose expects plain unstarred packets")
        g_terms.append(TensorTerm(t.coefficient, (replace(phi, shell=SHELL_POSITIVE),)))
        h_terms.append(TensorTerm(t.coefficient, (replace(phi, shell=SHELL_NEGATIVE),)))
    return FunctionSequence(0j, tuple(g_terms)), star(FunctionSequence(0j, tuple(h_terms)))


def poincare_apply(a, lam, f: FunctionSequence, max_rapidity: float = MAX_RAPIDITY) -> FunctionSequence:
    tag = make_tag(a, lam, max_rapidity)
    if tag == IDENTITY_TAG:
        return f
    return FunctionSequence(
        f.scalar, tuple(TensorTerm(t.coefficient, tuple(transform_packet(p, tag) for p in t.factors)) for t in f.terms)
    )


def time_translate(t: float, f: FunctionSequence) -> FunctionSequence:
    """``U(t) f``: every factor gains the on-shell phase ``e^{-i omega t}``."""
    if not f.in_B:
        raise ValueError("time translation is defined here for sequences in B")
    if t == 0:
        return f

    def shift(p: GaussianPacket) -> GaussianPacket:
        if p.transform is None:
            return replace(p, tau=p.tau - t)
        return transform_packet(p, make_tag((-t, 0.0, 0.0, 0.0)))

    return FunctionSequence(f.scalar, tuple(TensorTerm(x.coefficient, tuple(shift(p) for p in x.factors)) for x in f.terms))
