"""Pairings ``W(f* x g)`` on sequences in B, Gram matrices and cluster scans.

Every evaluation in one call shares a single shell-transform lattice, so a
Gram matrix is assembled from one discrete positive measure and stays
positive semidefinite up to roundoff, not just up to quadrature error.
"""
from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .algebra import FunctionSequence, GaussianPacket, TensorTerm, poincare_apply, star_packet
from .kernel import KernelTerm, MomentMeasure, TermList, assemble_W, reduce_for_B
from .quad import (
    QuadConfig,
    ShellEvaluator,
    conjoined_batch,
    delta_overlap,
    design_grid,
    energy_bound,
    two_point_overlap,
)

GRAM_SCHEMA = "uqft.gram/1"
# forward configurations (a packet on both sides of a conjoined factor) have
# power-law tails in upsilon; the cut at the cap is a positive restriction of
# the measure, so positivity is unaffected and the tail goes into the error
GRAM_QUAD = QuadConfig(allow_truncation=True)
MAX_BASIS = 16
MAX_PARTICLES = 3


@dataclass(frozen=True)
class _Job:
    entry: object
    weight: complex
    terms: tuple[KernelTerm, ...]
    slots: tuple[GaussianPacket, ...]


def _slot_key(slot):
    packet, sign = slot
    return (repr(packet), sign)


def evaluate_jobs(
    jobs: Sequence[_Job],
    measure: MomentMeasure,
    cfg: QuadConfig,
    upsilon_cap: float | None = None,
) -> dict:
    """Sum ``weight * term(slots)`` into ``entry`` for every job and term.

    Returns ``{entry: (value, error)}``.  All conjoined factors go through one
    batched lattice integration.
    """
    groups_l: dict = {}
    groups_r: dict = {}
    deltas: dict = {}
    plan = []
    for job in jobs:
        for term in job.terms:
            if len(job.slots) != term.n:
                raise ValueError("term arity does not match the slot list")
            signs = term.signs()
            if any(job.slots[i].vanishes_on(signs[i]) for i in range(term.n)):
                continue
            c = 0.0
            cpair = None
            block = term.conjoined
            if block is not None:
                c = measure.c(block.eta)
                if c == 0:
                    continue
                sl = [(job.slots[i - 1], signs[i - 1]) for i in block.indices]
                left = tuple(sorted((s for s in sl if s[1] < 0), key=_slot_key))
                right = tuple(sorted((s for s in sl if s[1] > 0), key=_slot_key))
                cpair = (groups_l.setdefault(left, len(groups_l)), groups_r.setdefault(right, len(groups_r)))
            dkeys = []
            for tp in term.two_points:
                key = (job.slots[tp.first - 1], job.slots[tp.second - 1])
                deltas.setdefault(key, None)
                dkeys.append(key)
            plan.append((job.entry, job.weight * complex(term.coefficient), c, cpair, dkeys))

    for key in deltas:
        deltas[key] = delta_overlap(key[0], key[1], cfg)

    cvals: dict = {}
    cerrs: dict = {}
    pairs = sorted({p[3] for p in plan if p[3] is not None})
    if pairs:
        lgroups = list(groups_l)
        rgroups = list(groups_r)
        packets = []
        seen = set()
        bound = 0.0
        for i, j in pairs:
            neg = [p for p, _ in lgroups[i]]
            pos = [p for p, _ in rgroups[j]]
            bound = max(bound, energy_bound(neg, pos, cfg))
            for p in neg + pos:
                if p not in seen:
                    seen.add(p)
                    packets.append(p)
        grid = design_grid(packets, cfg, bound, upsilon_cap)
        res = conjoined_batch(grid, lgroups, rgroups, pairs, cfg, ShellEvaluator(grid))
        cvals, cerrs = res.values, res.errors

    out: dict = {}
    for entry, w, c, cpair, dkeys in plan:
        val = w
        rel = 0.0
        if cpair is not None:
            s = cvals[cpair]
            val *= c * s
            rel += cerrs[cpair] / abs(s) if s != 0 else 0.0
            if s == 0:
                err_abs = abs(w) * c * cerrs[cpair]
            else:
                err_abs = None
        else:
            err_abs = None
        for key in dkeys:
            d, e = deltas[key]
            val *= d
            rel += e / abs(d) if d != 0 else 0.0
        err = abs(val) * rel if err_abs is None else err_abs
        v0, e0 = out.get(entry, (0j, 0.0))
        out[entry] = (v0 + val, e0 + err)
    return out


def _check_B(f: FunctionSequence, max_particles: int) -> None:
    if not f.in_B:
        raise ValueError("pairings are evaluated on sequences in B (lifted, unstarred factors)")
    if f.degree > max_particles:
        raise ValueError(f"sequence degree {f.degree} exceeds the particle cap {max_particles}")


def _slots(ta: TensorTerm, tb: TensorTerm) -> tuple[GaussianPacket, ...]:
    return tuple(star_packet(p) for p in reversed(ta.factors)) + tb.factors


def _pair_jobs(entry, f: FunctionSequence, g: FunctionSequence, kernel: Callable[[int, int], TermList]) -> list[_Job]:
    jobs = []
    for ta in f.terms:
        for tb in g.terms:
            terms = kernel(ta.degree, tb.degree).terms
            if terms:
                jobs.append(_Job(entry, ta.coefficient.conjugate() * tb.coefficient, terms, _slots(ta, tb)))
    return jobs


def _reduced_kernel(k: int, m: int) -> TermList:
    return reduce_for_B(k, m)


def pairing_matrix(
    bras: Sequence[FunctionSequence],
    kets: Sequence[FunctionSequence],
    measure: MomentMeasure,
    cfg: QuadConfig = GRAM_QUAD,
    kernel: Callable[[int, int], TermList] = _reduced_kernel,
    max_particles: int = MAX_PARTICLES,
    upsilon_cap: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Matrix of ``W(bra_a* x ket_b)`` and per-entry error estimates."""
    for f in list(bras) + list(kets):
        _check_B(f, max_particles)
    jobs = []
    for a, f in enumerate(bras):
        for b, g in enumerate(kets):
            jobs.extend(_pair_jobs((a, b), f, g, kernel))
    res = evaluate_jobs(jobs, measure, cfg, upsilon_cap)
    mat = np.zeros((len(bras), len(kets)), dtype=complex)
    err = np.zeros((len(bras), len(kets)))
    for a, f in enumerate(bras):
        for b, g in enumerate(kets):
            v, e = res.get((a, b), (0j, 0.0))
            mat[a, b] = f.scalar.conjugate() * g.scalar + v
            err[a, b] = e
    return mat, err


def eval_pairing(
    f: FunctionSequence,
    g: FunctionSequence,
    measure: MomentMeasure,
    cfg: QuadConfig = GRAM_QUAD,
    max_particles: int = MAX_PARTICLES,
) -> complex:
    """``W(f* x g)`` through the B-reduced kernels ``V_{k,m}``."""
    return complex(pairing_matrix([f], [g], measure, cfg, max_particles=max_particles)[0][0, 0])


def eval_pairing_full(
    f: FunctionSequence,
    g: FunctionSequence,
    measure: MomentMeasure,
    cfg: QuadConfig = GRAM_QUAD,
    kernel_W: Callable[[int], TermList] = assemble_W,
    max_particles: int = MAX_PARTICLES,
) -> tuple[complex, float]:
    """``W(f* x g)`` from the fully symmetrized ``W_n`` term lists, every sign placement included."""
    mat, err = pairing_matrix([f], [g], measure, cfg, lambda k, m: kernel_W(k + m), max_particles)
    return complex(mat[0, 0]), float(err[0, 0])


def free_field_oracle(f: FunctionSequence, g: FunctionSequence, cfg: QuadConfig = QuadConfig()) -> complex:
    """Free-field pairing as a permanent of one-particle overlaps.

    Independent of the kernel pipeline: each starred slot is matched to an
    unstarred slot in all ``l!`` ways.
    """
    total = f.scalar.conjugate() * g.scalar
    for ta in f.terms:
        for tb in g.terms:
            if ta.degree != tb.degree or ta.degree == 0:
                continue
            n = ta.degree
            over = [[two_point_overlap(ta.factors[i], tb.factors[j], cfg) for j in range(n)] for i in range(n)]
            perm = sum(math.prod(over[i][s[i]] for i in range(n)) for s in itertools.permutations(range(n)))
            total += ta.coefficient.conjugate() * tb.coefficient * perm
    return complex(total)


@dataclass(frozen=True)
class GramReport:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    min_eig: float
    max_eig: float
    psd: bool
    per_entry_error: np.ndarray
    tol: float
    seconds: float = 0.0

    def hermiticity_defect(self) -> np.ndarray:
        return np.abs(self.matrix - self.matrix.conj().T)

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema": GRAM_SCHEMA,
                "matrix_re": self.matrix.real.tolist(),
                "matrix_im": self.matrix.imag.tolist(),
                "per_entry_error": self.per_entry_error.tolist(),
                "eigenvalues": self.eigenvalues.tolist(),
                "min_eig": self.min_eig,
                "max_eig": self.max_eig,
                "psd": self.psd,
                "tol": self.tol,
            },
            indent=2,
        )

    def eigen_csv(self) -> str:
        lines = ["index,eigenvalue"]
        lines += [f"{i},{float(v)!r}" for i, v in enumerate(self.eigenvalues)]
        return "\n".join(lines) + "\n"


def gram_matrix(
    basis: Sequence[FunctionSequence],
    measure: MomentMeasure,
    cfg: QuadConfig = GRAM_QUAD,
    tol: float = 1e-8,
    max_particles: int = MAX_PARTICLES,
) -> GramReport:
    """Gram matrix with eigen-decomposition; ``psd`` means ``min_eig >= -tol * max_eig``."""
    if not 1 <= len(basis) <= MAX_BASIS:
        raise ValueError(f"basis size must be between 1 and {MAX_BASIS}")
    start = time.perf_counter()
    mat, err = pairing_matrix(basis, basis, measure, cfg, max_particles=max_particles)
    herm = 0.5 * (mat + mat.conj().T)
    eig = np.linalg.eigvalsh(herm)
    lo, hi = float(eig[0]), float(eig[-1])
    psd = lo >= -tol * max(hi, 0.0)
    return GramReport(mat, eig, lo, hi, psd, err, tol, time.perf_counter() - start)


def norm(f: FunctionSequence, measure: MomentMeasure, cfg: QuadConfig = GRAM_QUAD) -> float:
    val = eval_pairing(f, f, measure, cfg)
    return math.sqrt(max(val.real, 0.0))


@dataclass(frozen=True)
class ClusterPoint:
    rho: float
    value: complex
    deviation: float
    error: float


def cluster_scan(
    f: FunctionSequence,
    g: FunctionSequence,
    direction: Sequence[float],
    rhos: Iterable[float],
    measure: MomentMeasure,
    cfg: QuadConfig = GRAM_QUAD,
) -> list[ClusterPoint]:
    """``|W(f* x (rho a, 1) g) - conj(f_0) g_0|`` along a spatial direction."""
    a = np.asarray(direction, dtype=float)
    if a.shape != (3,) or not np.any(a):
        raise ValueError("direction must be a nonzero spatial 3-vector")
    a = a / np.linalg.norm(a)
    base = f.scalar.conjugate() * g.scalar
    out = []
    for rho in rhos:
        shifted = poincare_apply((0.0, *(rho * a)), None, g) if rho != 0 else g
        mat, err = pairing_matrix([f], [shifted], measure, cfg)
        v = complex(mat[0, 0])
        out.append(ClusterPoint(float(rho), v, abs(v - base), float(err[0, 0])))
    return out
