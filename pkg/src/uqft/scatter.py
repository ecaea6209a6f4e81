"""Finite-width scattering amplitudes from LSZ wave packets.

The connected non-forward amplitude at width ``L`` is the full conjoined
term of ``W_{n+m}`` between ``n`` incoming and ``m`` outgoing lifted packets.
Its large-``L`` behaviour is compared with a closed form obtained by
linearising every ``omega`` about its packet center.
"""
from __future__ import annotations

import io
import csv
import math
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .algebra import FunctionSequence, lsz_packet, star_packet
from .kernel import MomentMeasure
from .quad import AmplitudeReport, QuadConfig, conjoined_integral, grid_for_slots

FORWARD_MARGIN = 3.0      # non-forward means every in/out separation exceeds this / L
UPSILON_SIGMAS = 7.0      # auxiliary-time cap in units of the amplitude's time spread
SCAN_COLUMNS = ("L", "numeric_re", "numeric_im", "err", "closed_re", "closed_im", "ratio_abs")


def _vectors(momenta) -> np.ndarray:
    arr = np.asarray(momenta, dtype=float).reshape(-1, 3)
    return arr


@dataclass(frozen=True)
class ScatterKinematics:
    in_momenta: tuple[tuple[float, float, float], ...]
    out_momenta: tuple[tuple[float, float, float], ...]
    mass: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "in_momenta", tuple(tuple(float(x) for x in q) for q in self.in_momenta))
        object.__setattr__(self, "out_momenta", tuple(tuple(float(x) for x in q) for q in self.out_momenta))
        if any(len(q) != 3 for q in self.in_momenta + self.out_momenta):
            raise ValueError("momenta must be 3-vectors")
        if not self.mass > 0:
            raise ValueError("mass must be positive")

    @property
    def n_in(self) -> int:
        return len(self.in_momenta)

    @property
    def n_out(self) -> int:
        return len(self.out_momenta)

    @property
    def total(self) -> int:
        return self.n_in + self.n_out

    def _all(self) -> np.ndarray:
        return _vectors(self.in_momenta + self.out_momenta)

    def omegas(self) -> np.ndarray:
        q = self._all()
        return np.sqrt(self.mass**2 + np.sum(q * q, axis=1))

    def signs(self) -> np.ndarray:
        return np.array([1.0] * self.n_in + [-1.0] * self.n_out)

    # sums go through fsum so relabeling within the in- or out-set is exact

    @property
    def q0(self) -> float:
        """Energy imbalance, incoming minus outgoing."""
        return math.fsum(self.signs() * self.omegas())

    @property
    def q(self) -> np.ndarray:
        """Momentum imbalance, incoming minus outgoing."""
        terms = self.signs()[:, None] * self._all()
        return np.array([math.fsum(terms[:, i]) for i in range(3)])

    def velocities(self) -> np.ndarray:
        return self._all() / self.omegas()[:, None]

    @property
    def mean_velocity(self) -> np.ndarray:
        b = self.velocities()
        return np.array([math.fsum(b[:, i]) for i in range(3)]) / len(b)

    @property
    def mean_square_velocity(self) -> float:
        b = self.velocities()
        return math.fsum((b * b).ravel()) / len(b)

    @property
    def velocity_spread(self) -> float:
        """``sigma_b^2``: mean square minus squared mean of the velocities."""
        bbar = self.mean_velocity
        return self.mean_square_velocity - math.fsum(bbar * bbar)

    def velocity_spread_pairs(self) -> float:
        b = self.velocities()
        n = len(b)
        tot = sum(float(np.sum((b[i] - b[j]) ** 2)) for i in range(n) for j in range(i + 1, n))
        return tot / n**2

    def min_separation(self) -> float:
        if not self.in_momenta or not self.out_momenta:
            return math.inf
        a = _vectors(self.in_momenta)
        b = _vectors(self.out_momenta)
        return float(np.min(np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)))

    def is_non_forward(self, width: float) -> bool:
        return self.min_separation() > FORWARD_MARGIN / width

    def rotated(self, rot: np.ndarray) -> "ScatterKinematics":
        r = np.asarray(rot, dtype=float)
        return ScatterKinematics(
            tuple(tuple(r @ np.asarray(q)) for q in self.in_momenta),
            tuple(tuple(r @ np.asarray(q)) for q in self.out_momenta),
            self.mass,
        )


def lsz_sequence(momenta: Sequence[Sequence[float]], width: float, tau: float = 0.0, mass: float = 1.0) -> FunctionSequence:
    """Product of lifted Gaussian packets centred at ``momenta``."""
    if not width > 0:
        raise ValueError("width must be positive")
    return FunctionSequence.product_state([lsz_packet(tuple(q), width, tau, mass) for q in momenta])


def _validate(kin: ScatterKinematics, width: float) -> None:
    if kin.n_in < 2 or kin.n_out < 2:
        raise ValueError("the connected term needs at least two incoming and two outgoing particles")
    if not kin.velocity_spread > 1e-12:
        raise ValueError("velocity spread sigma_b^2 must be positive")
    if not kin.is_non_forward(width):
        raise ValueError(
            f"forward kinematics: min in/out separation {kin.min_separation():.3g} <= {FORWARD_MARGIN}/L"
        )


def upsilon_spread(kin: ScatterKinematics, width: float) -> float:
    """Width in auxiliary time of the linearised amplitude integrand."""
    return width * math.sqrt(2.0) / (math.sqrt(kin.velocity_spread) * math.sqrt(kin.total))


def amplitude_finite_L(
    kin: ScatterKinematics,
    width: float,
    measure: MomentMeasure,
    cfg: QuadConfig = QuadConfig(p_sigmas=4.0),
    tau: float = 0.0,
) -> AmplitudeReport:
    """Connected non-forward amplitude between LSZ packet products of width ``width``."""
    start = time.perf_counter()
    _validate(kin, width)
    c = measure.c(kin.total)
    if c == 0:
        return AmplitudeReport(0j, 0.0, "u-grid", time.perf_counter() - start)
    ins = [lsz_packet(q, width, tau, kin.mass) for q in kin.in_momenta]
    outs = [lsz_packet(q, width, tau, kin.mass) for q in kin.out_momenta]
    slots = [(star_packet(p), -1) for p in reversed(ins)] + [(p, 1) for p in outs]
    cap = max(cfg.upsilon_cap, UPSILON_SIGMAS * upsilon_spread(kin, width))
    grid = grid_for_slots(slots, cfg, upsilon_cap=cap)
    val, err = conjoined_integral(grid, slots, cfg)
    return AmplitudeReport(c * val, abs(c) * err, "u-grid", time.perf_counter() - start)


def closed_form_amplitude(kin: ScatterKinematics, width: float, measure: MomentMeasure) -> complex:
    """Leading large-width form of the connected amplitude."""
    s2 = kin.velocity_spread
    if not s2 > 0:
        raise ValueError("velocity spread sigma_b^2 must be positive")
    n = kin.total
    c = measure.c(n)
    q = kin.q
    shift = kin.q0 - math.fsum(q * kin.mean_velocity)
    pref = (width / math.sqrt(math.pi * n)) ** 4
    damp = math.exp(-(width**2) * math.fsum(q * q) / n) * math.exp(-(width**2) * shift**2 / (n * s2))
    return complex(c * pref * damp / math.sqrt(s2))


@dataclass(frozen=True)
class ScanRow:
    width: float
    numeric: AmplitudeReport
    closed: complex

    @property
    def ratio(self) -> complex:
        return self.numeric.value / self.closed if self.closed != 0 else complex("nan")

    def csv_fields(self) -> list[str]:
        v = self.numeric.value
        return [repr(self.width), repr(v.real), repr(v.imag), repr(self.numeric.error),
                repr(self.closed.real), repr(self.closed.imag), repr(abs(self.ratio))]


def convergence_scan(
    kin: ScatterKinematics,
    widths: Sequence[float],
    measure: MomentMeasure,
    cfg: QuadConfig = QuadConfig(p_sigmas=4.0),
    tau: float = 0.0,
) -> list[ScanRow]:
    return [
        ScanRow(float(L), amplitude_finite_L(kin, L, measure, cfg, tau), closed_form_amplitude(kin, L, measure))
        for L in widths
    ]


def scan_csv(rows: Sequence[ScanRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCAN_COLUMNS)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


def elastic_2to2(p: float = 1.0, mass: float = 1.0) -> ScatterKinematics:
    """Head-on pair along x scattering to a pair along y, energy and momentum conserving."""
    return ScatterKinematics(((p, 0, 0), (-p, 0, 0)), ((0, p, 0), (0, -p, 0)), mass)


def inelastic_2to3(mass: float = 1.0) -> ScatterKinematics:
    """Head-on pair with |q| = 1.5 producing three particles at 120 degrees in the yz-plane.

    With ``mass = 1`` the outgoing |q| = 2/3 makes ``3 omega_out = 2 omega_in`` exactly.
    """
    p_in = 1.5 * mass
    e_out = 2 * math.sqrt(mass**2 + p_in**2) / 3
    p_out = math.sqrt(e_out**2 - mass**2)
    outs = tuple((0.0, p_out * math.cos(a), p_out * math.sin(a)) for a in (0.0, 2 * math.pi / 3, 4 * math.pi / 3))
    return ScatterKinematics(((p_in, 0, 0), (-p_in, 0, 0)), outs, mass)
