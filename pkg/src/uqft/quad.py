"""Numerical evaluation of two-point and conjoined factors on wave packets.

Two-point factors are three-dimensional overlaps done by tensor Gauss-Hermite
quadrature centred on the product Gaussian.  Conjoined factors use the
auxiliary spacetime variable ``u = (upsilon, u_vec)``::

    c_eta * int du/(2 pi)^4  prod_j h_j(upsilon, u_vec)
    h_j(upsilon, u_vec) = int d^3p/(2 omega) F_j(s_j omega, p) e^{i (s_j omega upsilon - p.u_vec)}

Each ``h_j`` is an FFT over a momentum grid centred on its packet, all grids
sharing one spacing so that the ``u_vec`` lattices coincide.  The
``upsilon`` integral is a trapezoid sum grown outward until the integrand
has decayed.  A Monte Carlo route with a smoothed energy delta serves as an
independent oracle.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import scipy.fft as sp_fft
from scipy.special import roots_hermite

from .algebra import GaussianPacket, star_packet
from .kernel import ConjoinedFactor, KernelTerm, MomentMeasure, TwoPointFactor

Slot = tuple[GaussianPacket, int]
TWO_PI = 2 * math.pi


class ConvergenceError(RuntimeError):
    """A quadrature did not reach its tolerance; ``estimate`` holds what it got."""

    def __init__(self, message: str, estimate=None, error: float | None = None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


@dataclass(frozen=True)
class QuadConfig:
    p_sigmas: float = 4.5            # momentum grid half-width in units of 1/L
    n_min: int = 15                  # momentum points per axis, lower bound
    n_max: int = 161
    refine: float = 1.0              # >1 shrinks both grid steps by this factor
    upsilon_cap: float = 25.0        # largest |upsilon - center| explored
    upsilon_safety: float = 0.4      # step as a fraction of the alias-free bound
    tail_tol: float = 1e-6           # stop when the integrand edge falls below this fraction of its peak
    block: int = 8
    allow_truncation: bool = False   # report the tail as error instead of raising at the cap
    overlap_tol: float = 1e-12
    overlap_max_nodes: int = 128
    mc_samples: int = 400_000
    mc_chunk: int = 50_000
    seed: int = 0
    eps_ladder: tuple[float, ...] = (0.2, 0.1, 0.05)

    def __post_init__(self):
        for name in ("p_sigmas", "refine", "upsilon_cap", "upsilon_safety", "tail_tol", "overlap_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_min < 3 or self.n_max < self.n_min:
            raise ValueError("need 3 <= n_min <= n_max")
        if self.mc_samples < 1000 or self.mc_chunk < 1:
            raise ValueError("mc_samples must be at least 1000")
        validate_ladder(self.eps_ladder)


def validate_ladder(ladder: Sequence[float]) -> None:
    if len(ladder) < 1 or any(e <= 0 for e in ladder):
        raise ValueError("smoothing widths must be positive")
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("smoothing ladder must be strictly decreasing")


@dataclass(frozen=True)
class AmplitudeReport:
    value: complex
    error: float
    method: str
    seconds: float = 0.0


def _omega(mass: float, p: np.ndarray) -> np.ndarray:
    return np.sqrt(mass * mass + np.sum(p * p, axis=-1))


def _check_slot(slot: Slot) -> None:
    packet, sign = slot
    if sign not in (1, -1):
        raise ValueError("slot sign must be +1 or -1")
    if not isinstance(packet, GaussianPacket):
        raise TypeError("slot packet must be a GaussianPacket")


# -- two-point overlaps ---------------------------------------------------

def _neg_center(packet: GaussianPacket) -> np.ndarray:
    # F(-omega, -p) as a function of p peaks at minus the packet's own center
    return -packet.momentum_center()


def _gaussian_envelope(neg: GaussianPacket, pos: GaussianPacket) -> tuple[np.ndarray, float] | None:
    """Center and exponent ``a`` of the product Gaussian, when it is one."""
    for p in (neg, pos):
        if p.transform is not None and not p.transform.is_translation():
            return None
    a = neg.width**2 + pos.width**2
    c = (neg.width**2 * _neg_center(neg) + pos.width**2 * pos.momentum_center()) / a
    return c, a


def _overlap_integrand(neg: GaussianPacket, pos: GaussianPacket, p: np.ndarray) -> np.ndarray:
    w = _omega(neg.mass, p)
    return neg.value(-1, -p) * pos.value(1, p) / (2 * w)


def _hermite_overlap(neg, pos, c, a, cfg: QuadConfig) -> tuple[complex, float]:
    prev = None
    n = 8
    while True:
        x, wts = roots_hermite(n)
        scale = 1 / math.sqrt(a)
        g = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)
        w3 = (wts[:, None, None] * wts[None, :, None] * wts[None, None, :]).reshape(-1)
        p = c + g * scale
        f = _overlap_integrand(neg, pos, p) * np.exp(np.sum(g * g, axis=-1))
        val = complex(np.sum(w3 * f)) * scale**3
        bound = float(np.sum(w3 * np.abs(f))) * scale**3
        if prev is not None:
            err = abs(val - prev)
            if err <= cfg.overlap_tol * max(bound, 1e-300) or bound == 0:
                return val, err
        if n >= cfg.overlap_max_nodes:
            raise ConvergenceError("two-point overlap did not converge", val, abs(val - prev) if prev is not None else None)
        prev = val
        # gentle growth: translation phases need ~|a| sqrt(a) nodes and a coarse rung spoils the comparison
        n = min(cfg.overlap_max_nodes, (3 * n) // 2)


def _box_overlap(neg, pos, cfg: QuadConfig) -> tuple[complex, float]:
    # trapezoid on a lab-frame box; spectrally accurate for smooth decaying integrands
    c = 0.5 * (_neg_center(neg) + pos.momentum_center())
    spread = max(neg.momentum_spread(), pos.momentum_spread())
    half = np.max(np.abs(_neg_center(neg) - pos.momentum_center())) / 2 + cfg.p_sigmas * math.sqrt(2) * spread
    prev = None
    n = 17
    while True:
        ax = np.linspace(-half, half, n)
        h = ax[1] - ax[0]
        g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3) + c
        f = _overlap_integrand(neg, pos, g)
        val = complex(np.sum(f)) * h**3
        bound = float(np.sum(np.abs(f))) * h**3
        if prev is not None:
            err = abs(val - prev)
            if err <= cfg.overlap_tol * max(bound, 1e-300) or bound == 0:
                return val, err
        if 2 * n - 1 > cfg.overlap_max_nodes * 2:
            raise ConvergenceError("two-point overlap did not converge", val, abs(val - prev) if prev is not None else None)
        prev = val
        n = 2 * n - 1


def delta_overlap(neg: GaussianPacket, pos: GaussianPacket, cfg: QuadConfig = QuadConfig()) -> tuple[complex, float]:
    """``int d^3p/(2 omega) F_neg(-omega, -p) F_pos(omega, p)`` with an error estimate.

    ``neg`` is the packet in the slot read on the negative shell.
    """
    if neg.vanishes_on(-1) or pos.vanishes_on(1):
        return 0j, 0.0
    env = _gaussian_envelope(neg, pos)
    if env is None:
        return _box_overlap(neg, pos, cfg)
    return _hermite_overlap(neg, pos, env[0], env[1], cfg)


def two_point_overlap(f: GaussianPacket, g: GaussianPacket, cfg: QuadConfig = QuadConfig()) -> complex:
    """``int d^3p 2 omega conj(phi_f) phi_g`` for lifted packets; ``f`` is the starred slot."""
    if not (f.lifted and g.lifted):
        raise ValueError("two_point_overlap takes lifted packets")
    if f.starred or g.starred:
        raise ValueError("pass the unstarred packets; f is starred internally")
    return delta_overlap(star_packet(f), g, cfg)[0]


# -- grids for the auxiliary variable -------------------------------------

@dataclass(frozen=True)
class ShellGrid:
    """Common lattice for shell transforms.

    Momentum grids have ``n`` points per axis with spacing ``dk`` around each
    packet's own center; the conjugate position lattice has spacing
    ``2 pi / (n dk)`` and is shared by every packet.
    """

    n: int
    dk: float
    dupsilon: float
    upsilon_center: float
    upsilon_cap: float
    mass: float = 1.0

    @property
    def du(self) -> float:
        return TWO_PI / (self.n * self.dk)

    @property
    def u_axis(self) -> np.ndarray:
        return (np.arange(self.n) - self.n // 2) * self.du

    @property
    def k_offsets(self) -> np.ndarray:
        return (np.arange(self.n) - self.n // 2) * self.dk

    def spec(self) -> dict:
        return {
            "n": self.n,
            "dk": self.dk,
            "dupsilon": self.dupsilon,
            "upsilon_center": self.upsilon_center,
            "upsilon_cap": self.upsilon_cap,
            "mass": self.mass,
        }


def _slot_extent(packets: Sequence[GaussianPacket], cfg: QuadConfig):
    kmax = max(cfg.p_sigmas * math.sqrt(2) * p.momentum_spread() for p in packets)
    xmax = max(2 * cfg.p_sigmas * p.width for p in packets)
    speeds = []
    for p in packets:
        top = np.linalg.norm(p.momentum_center()) + kmax
        speeds.append(top / math.sqrt(p.mass**2 + top**2))
    return kmax, xmax, max(speeds)


def design_grid(
    packets: Sequence[GaussianPacket],
    cfg: QuadConfig,
    energy_bound: float,
    upsilon_cap: float | None = None,
) -> ShellGrid:
    """Choose one lattice that resolves every packet in ``packets``.

    ``energy_bound`` bounds ``|sum_j s_j omega_j|`` over the products that will be
    integrated; it fixes the alias-free ``upsilon`` step.
    """
    if not packets:
        raise ValueError("no packets to grid")
    mass = packets[0].mass
    if any(p.mass != mass for p in packets):
        raise ValueError("all packets must share one mass")
    cap = cfg.upsilon_cap if upsilon_cap is None else upsilon_cap
    kmax, xmax, vmax = _slot_extent(packets, cfg)
    foci = [p.focus() for p in packets]
    times = [t for t, _ in foci]
    t_mid = 0.5 * (min(times) + max(times))
    t_spread = 0.5 * (max(times) - min(times))
    x_off = max(float(np.linalg.norm(x)) for _, x in foci)
    span = 2 * (xmax + vmax * (cap + t_spread) + x_off)
    dk = TWO_PI / span / cfg.refine
    n = 2 * math.ceil(kmax / dk) + 1
    n = max(n, cfg.n_min | 1)
    if n > cfg.n_max:
        raise ConvergenceError(f"momentum grid needs {n} points per axis, above n_max={cfg.n_max}")
    dups = cfg.upsilon_safety * TWO_PI / max(energy_bound, 1e-3) / cfg.refine
    return ShellGrid(n, dk, dups, t_mid, cap + t_spread, mass)


def energy_bound(neg_packets: Sequence[GaussianPacket], pos_packets: Sequence[GaussianPacket], cfg: QuadConfig) -> float:
    """Bound on ``|sum_pos omega - sum_neg omega|`` over the momentum grids."""
    allp = list(neg_packets) + list(pos_packets)
    if not allp:
        return 1.0
    kmax, _, _ = _slot_extent(allp, cfg)
    m = allp[0].mass

    def top(p):
        r = np.linalg.norm(p.momentum_center()) + kmax
        return math.sqrt(m * m + r * r)

    hi = sum(top(p) for p in pos_packets) - m * len(neg_packets)
    lo = sum(top(p) for p in neg_packets) - m * len(pos_packets)
    return max(hi, lo, 0.0) + m * 1e-3


class ShellEvaluator:
    """Shell transforms ``h(upsilon, u_vec)`` of packets on a shared lattice.

    Internally arrays stay in FFT-native order; only :meth:`h` returns them
    in natural (centred) lattice order.
    """

    def __init__(self, grid: ShellGrid):
        self.grid = grid
        self._base: dict = {}
        self._walk: dict = {}

    def _prepare(self, packet: GaussianPacket, sign: int):
        key = (packet, sign)
        if key not in self._base:
            g = self.grid
            c = packet.momentum_center()
            ax = g.k_offsets
            p = np.stack(np.meshgrid(ax + c[0], ax + c[1], ax + c[2], indexing="ij"), axis=-1)
            w = _omega(g.mass, p)
            base = packet.value(sign, p) / (2 * w)
            u = g.u_axis
            phase = np.exp(-1j * c[0] * u)[:, None, None] * np.exp(-1j * c[1] * u)[None, :, None] * np.exp(-1j * c[2] * u)[None, None, :]
            sw = np.fft.ifftshift(sign * w)
            self._base[key] = (
                np.fft.ifftshift(base),
                sw,
                np.fft.ifftshift(phase) * g.dk**3,
                np.exp(1j * sw * g.dupsilon),
            )
        return self._base[key]

    def _transform(self, key, weighted: np.ndarray) -> np.ndarray:
        return self._base[key][2] * sp_fft.fftn(weighted)

    def h(self, packet: GaussianPacket, sign: int, upsilon: float) -> np.ndarray | None:
        """Samples of ``h`` on the position lattice; ``None`` for a structural zero."""
        if packet.vanishes_on(sign):
            return None
        if packet.starred:
            twin = self.h(packet.twin(), -sign, upsilon)
            return None if twin is None else np.conj(twin)
        key = (packet, sign)
        base, sw, _, _ = self._prepare(packet, sign)
        return np.fft.fftshift(self._transform(key, base * np.exp(1j * sw * upsilon)))

    def h_index(self, packet: GaussianPacket, sign: int, j: int) -> np.ndarray | None:
        """``h`` at ``upsilon_center + j * dupsilon`` in native order.

        Consecutive indices reuse the previous energy phase, so walking
        outward from 0 costs one multiply per step instead of an exponential.
        """
        if packet.vanishes_on(sign):
            return None
        if packet.starred:
            twin = self.h_index(packet.twin(), -sign, j)
            return None if twin is None else np.conj(twin)
        key = (packet, sign)
        base, sw, _, step = self._prepare(packet, sign)
        direction = (key, j > 0)
        last = self._walk.get(direction)
        if last is not None and last[0] + (1 if j > 0 else -1) == j:
            phase = last[1] * (step if j > 0 else np.conj(step))
        else:
            phase = np.exp(1j * sw * (self.grid.upsilon_center + j * self.grid.dupsilon))
        if j != 0:
            self._walk[direction] = (j, phase)
        else:
            self._walk[(key, True)] = (0, phase)
            self._walk[(key, False)] = (0, phase)
        return self._transform(key, base * phase)


@dataclass
class ConjoinedBatchResult:
    values: dict            # (left index, right index) -> complex integral (without c_eta)
    errors: dict
    upsilon_samples: int
    truncated: bool


def conjoined_batch(
    grid: ShellGrid,
    left_groups: Sequence[Sequence[Slot]],
    right_groups: Sequence[Sequence[Slot]],
    pairs: Iterable[tuple[int, int]],
    cfg: QuadConfig,
    evaluator: ShellEvaluator | None = None,
) -> ConjoinedBatchResult:
    """``int du/(2 pi)^4 prod_{left_i} h prod_{right_j} h`` for each requested ``(i, j)``.

    Splitting products into a left and a right half turns the lattice sum for
    many pairs into a single matrix product per ``upsilon`` sample.
    """
    pairs = sorted(set(pairs))
    ev = evaluator or ShellEvaluator(grid)
    if not pairs:
        return ConjoinedBatchResult({}, {}, 0, False)
    li = sorted({i for i, _ in pairs})
    ri = sorted({j for _, j in pairs})
    lpos = {i: a for a, i in enumerate(li)}
    rpos = {j: b for b, j in enumerate(ri)}
    pi_idx = np.array([lpos[i] for i, _ in pairs])
    pj_idx = np.array([rpos[j] for _, j in pairs])
    size = grid.n**3

    du3 = grid.du**3
    chunk = 32

    def transforms(j: int) -> dict:
        # one FFT per distinct (packet, sign); starred slots conjugate their twin's
        out: dict = {}
        for groups in (left_groups, right_groups):
            for gi in set(li if groups is left_groups else ri):
                for packet, sign in groups[gi]:
                    if (packet, sign) in out:
                        continue
                    if packet.vanishes_on(sign):
                        out[(packet, sign)] = None
                        continue
                    base = (packet.twin(), -sign) if packet.starred else (packet, sign)
                    if base not in out:
                        out[base] = ev.h_index(base[0], base[1], j)
                    if packet.starred:
                        out[(packet, sign)] = np.conj(out[base])
        return out

    def half_products(groups, idxs, hs):
        out = np.zeros((len(idxs), size), dtype=complex)
        for row, gi in enumerate(idxs):
            acc = out[row]
            acc[:] = 1
            for slot in groups[gi]:
                hv = hs[slot]
                if hv is None:
                    acc[:] = 0
                    break
                acc *= hv.reshape(-1)
        return out

    def sample(j: int) -> np.ndarray:
        hs = transforms(j)
        res = np.zeros(len(pairs), dtype=complex)
        rchunks = [ri[k:k + chunk] for k in range(0, len(ri), chunk)]
        bcache = half_products(right_groups, ri, hs) if len(rchunks) == 1 else None
        for lk in range(0, len(li), chunk):
            a = half_products(left_groups, li[lk:lk + chunk], hs)
            for rk, rows in enumerate(rchunks):
                b = bcache if bcache is not None else half_products(right_groups, rows, hs)
                m = a @ b.T
                sel = (pi_idx >= lk) & (pi_idx < lk + chunk) & (pj_idx >= rk * chunk) & (pj_idx < rk * chunk + chunk)
                res[sel] = m[pi_idx[sel] - lk, pj_idx[sel] - rk * chunk]
        return res * du3

    samples: dict[int, np.ndarray] = {0: sample(0)}
    peak = np.abs(samples[0])
    jmax = int(math.floor(grid.upsilon_cap / grid.dupsilon))
    reach = 0
    converged = False
    while reach < jmax:
        lo_block = []
        hi_block = []
        for step in range(1, cfg.block + 1):
            j = reach + step
            if j > jmax:
                break
            samples[j] = sample(j)
            samples[-j] = sample(-j)
            hi_block.append(np.abs(samples[j]))
            lo_block.append(np.abs(samples[-j]))
        reach = max(k for k in samples)
        for arr in hi_block + lo_block:
            peak = np.maximum(peak, arr)
        edge = np.maximum(np.max(hi_block, axis=0), np.max(lo_block, axis=0))
        # absolute accuracy across the batch: small entries are judged against the largest one
        floor = cfg.tail_tol * peak.max()
        if np.all(edge <= floor):
            converged = True
            break
    js = sorted(samples)
    stack = np.array([samples[j] for j in js])
    norm = TWO_PI**4
    fine = stack.sum(axis=0) * grid.dupsilon / norm
    even = np.array([j % 2 == 0 for j in js])
    coarse = stack[even].sum(axis=0) * 2 * grid.dupsilon / norm
    # envelope beyond the edge modelled as a power law fitted between half
    # reach and full reach; forward configurations decay only like upsilon^-3
    tail = np.zeros(len(pairs))
    mags = np.abs(stack)
    width = max(1, min(cfg.block, reach // 4))
    for side in (1, -1):
        far_idx = [js.index(side * k) for k in range(reach - width + 1, reach + 1) if side * k in samples]
        mid_idx = [js.index(side * k) for k in range(reach // 2 - width + 1, reach // 2 + 1) if side * k in samples]
        if not far_idx or not mid_idx or reach < 4:
            tail += mags[[0, -1]].max(axis=0) * cfg.block * grid.dupsilon / norm
            continue
        far = mags[far_idx].max(axis=0)
        mid = mags[mid_idx].max(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            k = np.log(np.where(far > 0, mid / np.where(far > 0, far, 1), 2**8)) / math.log(2)
        k = np.clip(np.nan_to_num(k, nan=8.0), 1.5, 8.0)
        tail += far * reach * grid.dupsilon / (k - 1) / norm
    # momentum grids cut each profile at exp(-p_sigmas^2); products of eta
    # transforms also alias in u_vec at about exp(-4 p_sigmas^2 / eta)
    etas = np.array([len(left_groups[i]) + len(right_groups[j]) for i, j in pairs])
    absint = np.abs(stack).sum(axis=0) * grid.dupsilon / norm
    trunc = absint * (etas + 1) * np.exp(-cfg.p_sigmas**2 * np.minimum(1.0, 4.0 / np.maximum(etas, 1)))
    err = np.abs(fine - coarse) + tail + trunc
    if not converged and not cfg.allow_truncation:
        worst = int(np.argmax(err))
        raise ConvergenceError(
            f"upsilon integral not converged within |upsilon| <= {grid.upsilon_cap:.3g}",
            fine[worst],
            float(err[worst]),
        )
    values = {pr: complex(fine[k]) for k, pr in enumerate(pairs)}
    errors = {pr: float(err[k]) for k, pr in enumerate(pairs)}
    return ConjoinedBatchResult(values, errors, len(js), not converged)


def conjoined_integral(grid: ShellGrid, slots: Sequence[Slot], cfg: QuadConfig, evaluator=None) -> tuple[complex, float]:
    """``int du/(2 pi)^4 prod_j h_j`` for one product, split at the first positive slot."""
    left = [s for s in slots if s[1] < 0]
    right = [s for s in slots if s[1] > 0]
    res = conjoined_batch(grid, [left], [right], [(0, 0)], cfg, evaluator)
    return res.values[(0, 0)], res.errors[(0, 0)]


def grid_for_slots(slots: Sequence[Slot], cfg: QuadConfig, upsilon_cap: float | None = None) -> ShellGrid:
    neg = [p for p, s in slots if s < 0]
    pos = [p for p, s in slots if s > 0]
    return design_grid([p for p, _ in slots], cfg, energy_bound(neg, pos, cfg), upsilon_cap)


def eval_conjoined(
    term: KernelTerm,
    slots: Sequence[GaussianPacket],
    measure: MomentMeasure,
    cfg: QuadConfig = QuadConfig(),
    grid: ShellGrid | None = None,
) -> AmplitudeReport:
    """Evaluate a term with one conjoined factor on packets placed in its slots.

    Slot ``i`` is read on the shell fixed by ``term.negatives``; remaining
    two-point factors are multiplied in.
    """
    start = time.perf_counter()
    if len(slots) != term.n:
        raise ValueError(f"term has {term.n} arguments but {len(slots)} slots were given")
    block = term.conjoined
    if block is None:
        raise ValueError("term has no conjoined factor")
    c = measure.c(block.eta)
    if c == 0:
        return AmplitudeReport(0j, 0.0, "u-grid", time.perf_counter() - start)
    signs = term.signs()
    sl = [(slots[i - 1], signs[i - 1]) for i in block.indices]
    for s in sl:
        _check_slot(s)
    grid = grid or grid_for_slots(sl, cfg)
    val, err = conjoined_integral(grid, sl, cfg)
    val *= c
    err *= abs(c)
    for tp in term.two_points:
        d, e = delta_overlap(slots[tp.first - 1], slots[tp.second - 1], cfg)
        err = abs(val) * e + abs(d) * err + e * err
        val *= d
    return AmplitudeReport(val, err, "u-grid", time.perf_counter() - start)


def eval_term(term: KernelTerm, slots: Sequence[GaussianPacket], measure: MomentMeasure, cfg: QuadConfig = QuadConfig(), grid=None) -> AmplitudeReport:
    """Any kernel term: product of two-point overlaps, times a conjoined factor if present."""
    if term.conjoined is not None:
        r = eval_conjoined(term, slots, measure, cfg, grid)
        return AmplitudeReport(complex(term.coefficient) * r.value, float(abs(term.coefficient)) * r.error, r.method, r.seconds)
    start = time.perf_counter()
    val, err = complex(term.coefficient), 0.0
    for tp in term.two_points:
        d, e = delta_overlap(slots[tp.first - 1], slots[tp.second - 1], cfg)
        err = abs(val) * e + abs(d) * err
        val *= d
    return AmplitudeReport(val, err, "two-point", time.perf_counter() - start)


# -- single-packet transforms ---------------------------------------------

@dataclass(frozen=True)
class ShellTransform:
    packet: GaussianPacket
    sign: int
    upsilon: np.ndarray
    u_axis: np.ndarray
    samples: np.ndarray   # shape (len(upsilon), n, n, n)
    grid: ShellGrid

    def bound(self) -> float:
        """``int d^3p/(2 omega) |F|``, which dominates ``|h|`` everywhere."""
        g = self.grid
        c = self.packet.momentum_center()
        ax = g.k_offsets
        p = np.stack(np.meshgrid(ax + c[0], ax + c[1], ax + c[2], indexing="ij"), axis=-1)
        return float(np.sum(np.abs(self.packet.value(self.sign, p)) / (2 * _omega(g.mass, p)))) * g.dk**3


def shell_transform_at(packet: GaussianPacket, sign: int, upsilon: float, u_vec, cfg: QuadConfig = QuadConfig()) -> complex:
    """Direct Gauss-Hermite evaluation of ``h`` at one point."""
    if packet.vanishes_on(sign):
        return 0j
    if packet.starred:
        return complex(np.conj(shell_transform_at(packet.twin(), -sign, upsilon, u_vec, cfg)))
    if packet.transform is not None and not packet.transform.is_translation():
        raise ValueError("pointwise transform is implemented for unboosted packets")
    u_vec = np.asarray(u_vec, dtype=float)
    c = packet.momentum_center()
    a = packet.width**2
    prev = None
    n = 16
    while True:
        x, wts = roots_hermite(n)
        scale = 1 / math.sqrt(a)
        g = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)
        w3 = (wts[:, None, None] * wts[None, :, None] * wts[None, None, :]).reshape(-1)
        p = c + g * scale
        w = _omega(packet.mass, p)
        f = packet.value(sign, p) / (2 * w) * np.exp(1j * (sign * w * upsilon - p @ u_vec))
        val = complex(np.sum(w3 * f * np.exp(np.sum(g * g, axis=-1)))) * scale**3
        if prev is not None and abs(val - prev) <= 1e-12 * max(abs(val), 1e-300):
            return val
        if n >= 128:
            raise ConvergenceError("pointwise shell transform did not converge", val)
        prev = val
        n *= 2


def shell_transform(
    packet: GaussianPacket,
    sign: int,
    cfg: QuadConfig = QuadConfig(),
    upsilon=None,
    grid: ShellGrid | None = None,
    cache=None,
) -> ShellTransform:
    """Sample ``h`` on a lattice.  ``upsilon`` defaults to the packet's focus time."""
    _check_slot((packet, sign))
    if grid is None:
        grid = design_grid([packet], cfg, energy_bound([], [packet], cfg))
    ups = np.atleast_1d(np.asarray(grid.upsilon_center if upsilon is None else upsilon, dtype=float))
    key = None
    if cache is not None:
        key = cache.key(packet, sign, grid, ups)
        hit = cache.load(key)
        if hit is not None:
            return ShellTransform(packet, sign, ups, grid.u_axis, hit, grid)
    ev = ShellEvaluator(grid)
    out = np.zeros((len(ups), grid.n, grid.n, grid.n), dtype=complex)
    for i, v in enumerate(ups):
        h = ev.h(packet, sign, float(v))
        if h is not None:
            out[i] = h
    if cache is not None:
        cache.store(key, out, {"grid": grid.spec(), "upsilon": ups.tolist(), "sign": sign})
    return ShellTransform(packet, sign, ups, grid.u_axis, out, grid)


# -- Monte Carlo oracle ---------------------------------------------------

@dataclass(frozen=True)
class OracleReport:
    value: complex
    stderr: float
    ladder: tuple[float, ...]
    rungs: tuple[complex, ...]   # per-width estimates before extrapolation

    def __iter__(self):
        yield self.value
        yield self.stderr


def richardson_weights(ladder: Sequence[float]) -> np.ndarray:
    """Weights ``r`` with ``sum r_i V(eps_i) = V(0)`` for ``V`` even in ``eps``."""
    validate_ladder(ladder)
    e2 = np.asarray(ladder, dtype=float) ** 2
    k = len(e2)
    mat = np.vander(e2, k, increasing=True).T
    rhs = np.zeros(k)
    rhs[0] = 1.0
    return np.linalg.solve(mat, rhs)


def _gaussian_draw(rng, packet: GaussianPacket, count: int, center: np.ndarray):
    sd = packet.momentum_spread()
    x = rng.standard_normal((count, 3))
    p = center + sd * x
    logpdf = -0.5 * np.sum(x * x, axis=1) - 3 * math.log(sd) - 1.5 * math.log(TWO_PI)
    return p, np.exp(logpdf)


def mc_conjoined(slots: Sequence[Slot], cfg: QuadConfig, seed: int | None = None) -> OracleReport:
    """Monte Carlo for ``int prod d^3p_j/(2 omega_j) F_j delta^3(sum p) delta(sum s omega)``.

    The energy delta is a Gaussian of width ``eps`` for each rung of the
    ladder, all rungs sharing samples; extrapolation to ``eps = 0`` is linear
    in the per-sample weights so the standard error is exact for the
    combined estimator.
    """
    for s in slots:
        _check_slot(s)
    if len(slots) > 6:
        raise ValueError("oracle is limited to at most 6 slots")
    if any(p.vanishes_on(s) for p, s in slots):
        return OracleReport(0j, 0.0, tuple(cfg.eps_ladder), tuple(0j for _ in cfg.eps_ladder))
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    ladder = np.asarray(cfg.eps_ladder, dtype=float) * slots[0][0].mass
    r = richardson_weights(ladder)
    sums = np.zeros(len(ladder), dtype=complex)
    comb_sum = 0j
    comb_sq = 0.0
    total = 0
    while total < cfg.mc_samples:
        cnt = min(cfg.mc_chunk, cfg.mc_samples - total)
        psum = np.zeros((cnt, 3))
        esum = np.zeros(cnt)
        weight = np.ones(cnt, dtype=complex)
        for packet, sign in slots[:-1]:
            p, dens = _gaussian_draw(rng, packet, cnt, packet.momentum_center())
            w = _omega(packet.mass, p)
            weight *= packet.value(sign, p) / (2 * w) / dens
            psum += p
            esum += sign * w
        packet, sign = slots[-1]
        p = -psum
        w = _omega(packet.mass, p)
        weight *= packet.value(sign, p) / (2 * w)
        esum += sign * w
        per_rung = np.exp(-0.5 * (esum[None, :] / ladder[:, None]) ** 2) / (ladder[:, None] * math.sqrt(TWO_PI)) * weight[None, :]
        sums += per_rung.sum(axis=1)
        comb = r @ per_rung
        comb_sum += comb.sum()
        comb_sq += float(np.sum(np.abs(comb) ** 2))
        total += cnt
    rungs = sums / total
    mean = comb_sum / total
    var = max(comb_sq / total - abs(mean) ** 2, 0.0)
    return OracleReport(complex(mean), math.sqrt(var / total), tuple(float(e) for e in ladder), tuple(complex(v) for v in rungs))


def mc_delta(neg: GaussianPacket, pos: GaussianPacket, cfg: QuadConfig, seed: int | None = None) -> tuple[complex, float]:
    """Monte Carlo for the two-point overlap, sampling the product Gaussian."""
    if neg.vanishes_on(-1) or pos.vanishes_on(1):
        return 0j, 0.0
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    a = neg.width**2 + pos.width**2
    c = (neg.width**2 * _neg_center(neg) + pos.width**2 * pos.momentum_center()) / a
    sd = 1 / math.sqrt(2 * a)
    x = rng.standard_normal((cfg.mc_samples, 3))
    p = c + sd * x
    dens = np.exp(-0.5 * np.sum(x * x, axis=1)) / (sd**3 * TWO_PI**1.5)
    f = _overlap_integrand(neg, pos, p) / dens
    return complex(f.mean()), float(f.std() / math.sqrt(len(f)))


def oracle_eval(
    term: KernelTerm,
    slots: Sequence[GaussianPacket],
    measure: MomentMeasure,
    cfg: QuadConfig = QuadConfig(),
    max_stderr: float | None = None,
) -> OracleReport:
    """Independent Monte Carlo evaluation of ``term`` (coefficient included)."""
    if len(slots) != term.n:
        raise ValueError(f"term has {term.n} arguments but {len(slots)} slots were given")
    signs = term.signs()
    ladder = tuple(float(e) for e in cfg.eps_ladder)
    val = complex(term.coefficient)
    rel2 = 0.0
    rungs = tuple(val for _ in ladder)
    block = term.conjoined
    if block is not None:
        c = measure.c(block.eta)
        if c == 0:
            return OracleReport(0j, 0.0, ladder, tuple(0j for _ in ladder))
        rep = mc_conjoined([(slots[i - 1], signs[i - 1]) for i in block.indices], cfg)
        val *= c * rep.value
        rungs = tuple(complex(term.coefficient) * c * v for v in rep.rungs)
        rel2 += (rep.stderr / abs(rep.value)) ** 2 if rep.value != 0 else 0.0
    for n_tp, tp in enumerate(term.two_points):
        d, e = mc_delta(slots[tp.first - 1], slots[tp.second - 1], cfg, seed=cfg.seed + 7919 * (n_tp + 1))
        val *= d
        rungs = tuple(v * d for v in rungs)
        rel2 += (e / abs(d)) ** 2 if d != 0 else 0.0
    stderr = abs(val) * math.sqrt(rel2)
    if max_stderr is not None and stderr > max_stderr:
        raise ConvergenceError(f"oracle standard error {stderr:.3g} above requested {max_stderr:.3g}", val, stderr)
    return OracleReport(val, stderr, ladder, rungs)
