"""Symbolic n-point kernels as lists of two-point and conjoined factors.

A :class:`KernelTerm` is a rational coefficient times a product of factors
whose index sets partition ``{1..n}``, together with the set of argument
indices that carry negative energy.  Term lists are exact (``Fraction``
coefficients); floating point only enters when a term is evaluated against
wave packets in :mod:`uqft.quad`.
"""
from __future__ import annotations

import itertools
import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence, Union

import numpy as np

from .combinatorics import (
    SYMMETRIZER_CAP,
    CapExceeded,
    enumerate_partitions,
    partition_subsets,
    symmetrized_theta,
)

TERMLIST_SCHEMA = "uqft.termlist/1"


@dataclass(frozen=True, order=True)
class TwoPointFactor:
    """``delta(p_first + p_second) delta^+(p_second)``.

    ``first`` sits on the negative-energy shell, ``second`` on the positive one.
    """

    first: int
    second: int

    @property
    def indices(self) -> tuple[int, ...]:
        return (self.first, self.second)

    def relabel(self, perm: Sequence[int]) -> "TwoPointFactor":
        return TwoPointFactor(perm[self.first - 1], perm[self.second - 1])

    def abbrev(self) -> str:
        return f"({self.first}{self.second})"


@dataclass(frozen=True, order=True)
class ConjoinedFactor:
    """``c_eta delta(sum p) prod delta(p^2 - m^2)`` over ``indices``."""

    indices: tuple[int, ...]

    def __post_init__(self):
        if len(self.indices) < 4:
            raise ValueError("conjoined factors with fewer than 4 arguments vanish")
        if tuple(sorted(self.indices)) != self.indices:
            raise ValueError("conjoined indices must be ascending")

    @property
    def eta(self) -> int:
        return len(self.indices)

    def relabel(self, perm: Sequence[int]) -> "ConjoinedFactor":
        return ConjoinedFactor(tuple(sorted(perm[i - 1] for i in self.indices)))

    def abbrev(self) -> str:
        return "(" + "".join(str(i) for i in self.indices) + ")"


Factor = Union[TwoPointFactor, ConjoinedFactor]


def _factor_key(f: Factor):
    # conjoined factors print first, as in "(2345)(16)"
    return (0, f.indices) if isinstance(f, ConjoinedFactor) else (1, f.indices)


def canonical_factors(factors: Iterable[Factor]) -> tuple[Factor, ...]:
    return tuple(sorted(factors, key=_factor_key))


@dataclass(frozen=True)
class KernelTerm:
    coefficient: Fraction
    factors: tuple[Factor, ...]
    negatives: frozenset[int] = field(default_factory=frozenset)

    @property
    def n(self) -> int:
        return sum(len(f.indices) for f in self.factors)

    @property
    def conjoined(self) -> ConjoinedFactor | None:
        for f in self.factors:
            if isinstance(f, ConjoinedFactor):
                return f
        return None

    @property
    def two_points(self) -> tuple[TwoPointFactor, ...]:
        return tuple(f for f in self.factors if isinstance(f, TwoPointFactor))

    def signs(self) -> tuple[int, ...]:
        return tuple(-1 if i in self.negatives else 1 for i in range(1, self.n + 1))

    def key(self):
        return (tuple(sorted(self.negatives)), self.factors)

    def relabel(self, perm: Sequence[int]) -> "KernelTerm":
        return KernelTerm(
            self.coefficient,
            canonical_factors(f.relabel(perm) for f in self.factors),
            frozenset(perm[i - 1] for i in self.negatives),
        )

    def vanishes(self) -> bool:
        """True when the energy signs are incompatible with a factor's shells."""
        for f in self.factors:
            if isinstance(f, TwoPointFactor):
                if f.first not in self.negatives or f.second in self.negatives:
                    return True
            else:
                neg = sum(1 for i in f.indices if i in self.negatives)
                if neg == 0 or neg == len(f.indices):
                    return True
        return False

    def check_partition(self) -> None:
        seen: list[int] = []
        for f in self.factors:
            seen.extend(f.indices)
        if sorted(seen) != list(range(1, len(seen) + 1)):
            raise AssertionError(f"factor indices {seen} do not partition 1..{len(seen)}")
        if sum(isinstance(f, ConjoinedFactor) for f in self.factors) > 1:
            raise AssertionError("more than one conjoined factor in a term")

    def abbrev(self) -> str:
        return "".join(f.abbrev() for f in self.factors) or "1"


def _term_sort_key(t: KernelTerm):
    return (tuple(sorted(t.negatives)), len(t.factors), tuple(_factor_key(f) for f in t.factors))


@dataclass(frozen=True)
class TermList:
    n: int
    terms: tuple[KernelTerm, ...]
    label: str = ""

    def __iter__(self):
        return iter(self.terms)

    def __len__(self) -> int:
        return len(self.terms)

    def as_dict(self) -> dict:
        return {t.key(): t.coefficient for t in self.terms}

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema": TERMLIST_SCHEMA,
                "label": self.label,
                "n": self.n,
                "terms": [
                    {
                        "coefficient": str(t.coefficient),
                        "negatives": sorted(t.negatives),
                        "factors": [
                            {
                                "type": "conjoined" if isinstance(f, ConjoinedFactor) else "two_point",
                                "indices": list(f.indices),
                            }
                            for f in t.factors
                        ],
                    }
                    for t in self.terms
                ],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "TermList":
        data = json.loads(text)
        if data.get("schema") != TERMLIST_SCHEMA:
            raise ValueError(f"unsupported term list schema {data.get('schema')!r}")
        terms = []
        for t in data["terms"]:
            factors = []
            for f in t["factors"]:
                if f["type"] == "conjoined":
                    factors.append(ConjoinedFactor(tuple(f["indices"])))
                else:
                    factors.append(TwoPointFactor(*f["indices"]))
            terms.append(KernelTerm(Fraction(t["coefficient"]), tuple(factors), frozenset(t["negatives"])))
        return cls(data["n"], tuple(terms), data.get("label", ""))


def _collect(terms: Iterable[KernelTerm], n: int, label: str, drop_vanishing: bool = True) -> TermList:
    acc: dict = {}
    for t in terms:
        if drop_vanishing and t.vanishes():
            continue
        k = t.key()
        acc[k] = acc.get(k, Fraction(0)) + t.coefficient
    out = [KernelTerm(c, k[1], frozenset(k[0])) for k, c in acc.items() if c != 0]
    out.sort(key=_term_sort_key)
    for t in out:
        t.check_partition()
    return TermList(n, tuple(out), label)


def conjoined_valid(k: int, indices: Iterable[int], n: int) -> bool:
    """Whether the conjoined block ``indices`` survives the split at ``k``."""
    idx = set(indices)
    if len(idx) < 4 or k in (0, 1, n - 1, n):
        return False
    return {k - 1, k, k + 1, k + 2} <= idx


@lru_cache(maxsize=None)
def expand_V(k: int, m: int) -> TermList:
    """Link-cluster expansion of ``V_{k,m}`` over set partitions of ``1..k+m``.

    Pair blocks become two-point factors; larger blocks are kept only as
    valid conjoined factors.
    """
    n = k + m
    if n > SYMMETRIZER_CAP:
        raise CapExceeded(f"n={n} exceeds cap {SYMMETRIZER_CAP}")
    negatives = frozenset(range(1, k + 1))
    if n == 0:
        return TermList(0, (KernelTerm(Fraction(1), (), negatives),), f"V_{{{k},{m}}}")
    terms = []
    for part in enumerate_partitions(n):
        factors: list[Factor] = []
        for block in part.blocks:
            if len(block) == 2:
                factors.append(TwoPointFactor(*block))
            elif conjoined_valid(k, block, n):
                factors.append(ConjoinedFactor(block))
            else:
                break
        else:
            terms.append(KernelTerm(Fraction(1), canonical_factors(factors), negatives))
    terms.sort(key=_term_sort_key)
    return TermList(n, tuple(terms), f"V_{{{k},{m}}}")


def _block_permutations(k: int, m: int):
    for left in itertools.permutations(range(1, k + 1)):
        for right in itertools.permutations(range(k + 1, k + m + 1)):
            yield left + right


@lru_cache(maxsize=None)
def reduce_for_B(k: int, m: int) -> TermList:
    """``V_{k,m}`` on arguments symmetrized separately over the first ``k``
    (starred) and last ``m`` (unstarred) slots, first ``k`` energies negative.

    Terms whose two-point factors join two slots of the same side vanish
    and are dropped.
    """
    v = expand_V(k, m)
    weight = Fraction(1, math.factorial(k) * math.factorial(m))
    terms = []
    for perm in _block_permutations(k, m):
        for t in v.terms:
            r = t.relabel(perm)
            terms.append(KernelTerm(t.coefficient * weight, r.factors, r.negatives))
    return _collect(terms, k + m, f"V_{{{k},{m}}}[S f*, S g]")


def _placement(n: int, negatives: Sequence[int]) -> tuple[int, ...]:
    rest = [i for i in range(1, n + 1) if i not in set(negatives)]
    return tuple(negatives) + tuple(rest)


@lru_cache(maxsize=None)
def assemble_W(n: int) -> TermList:
    """Fully symmetrized, energy-ordered ``W_n`` with like terms collected.

    ``W_n = sum_k C(n,k) S[Theta_{k,n} V_{k,n-k}]``.  For each ``k`` the
    permutations that keep ``{1..k}`` negative are summed explicitly; the
    remaining placements of the negative set are obtained by relabeling.
    """
    if n > SYMMETRIZER_CAP:
        raise CapExceeded(f"n={n} exceeds symmetrizer cap {SYMMETRIZER_CAP}")
    if n == 0:
        return TermList(0, (KernelTerm(Fraction(1), ()),), "W_0")
    terms: list[KernelTerm] = []
    for k in range(n + 1):
        base = reduce_for_B(k, n - k)
        for negs in partition_subsets(n, k):
            perm = _placement(n, negs)
            terms.extend(t.relabel(perm) for t in base.terms)
    return _collect(terms, n, f"W_{n}")


def connected_W(n: int) -> TermList:
    """Terms of ``W_n`` consisting of a single conjoined factor on all arguments."""
    if n < 4:
        return TermList(n, (), f"CW_{n}")
    full = assemble_W(n)
    keep = tuple(t for t in full.terms if len(t.factors) == 1 and isinstance(t.factors[0], ConjoinedFactor))
    return TermList(n, keep, f"CW_{n}")


def connected_theta_bracket(signs: Sequence[int]) -> Fraction:
    """``1 - S[C(n,0)Th_0 + C(n,1)Th_1 + C(n,n-1)Th_{n-1} + C(n,n)Th_n]`` at fixed signs."""
    n = len(signs)
    edge = {0, 1, n - 1, n}
    return 1 - sum((math.comb(n, k) * symmetrized_theta(k, signs) for k in edge), Fraction(0))


def drop_conjoined(tl: TermList) -> TermList:
    """The free-field part: terms built from two-point factors only."""
    return TermList(tl.n, tuple(t for t in tl.terms if t.conjoined is None), tl.label + " (free)")


def symmetric_under(tl: TermList, perm: Sequence[int]) -> bool:
    return _collect((t.relabel(perm) for t in tl.terms), tl.n, "").as_dict() == tl.as_dict()


# -- abbreviated notation -------------------------------------------------

def _fmt_coef(c: Fraction) -> str:
    return "" if c == 1 else str(c)


def render_terms(terms: Iterable[KernelTerm]) -> str:
    parts = []
    for t in terms:
        parts.append(_fmt_coef(t.coefficient) + t.abbrev())
    return "+".join(parts) if parts else "0"


def render_W(tl: TermList) -> str:
    """Render a symmetric ``W_n`` list as ``Σ_part <groups>`` over the canonical
    placements ``negatives = {1..k}``."""
    n = tl.n
    if n == 0:
        return "1"
    if not tl.terms:
        return "0"
    entries: dict[tuple, list[int]] = {}
    order: list[tuple] = []
    for t in tl.terms:
        k = len(t.negatives)
        if t.negatives != frozenset(range(1, k + 1)):
            continue
        key = (t.factors, t.coefficient)
        if key not in entries:
            entries[key] = []
            order.append(key)
        entries[key].append(k)
    groups: dict[tuple, list[tuple]] = {}
    for key in order:
        sig = (key[1], tuple(sorted(entries[key])))
        groups.setdefault(sig, []).append(key[0])

    def gkey(item):
        (coef, ks), facs = item
        first = min(facs, key=lambda fs: (len(fs), tuple(_factor_key(f) for f in fs)))
        return (len(first), tuple(_factor_key(f) for f in first), ks, -coef)

    rendered = []
    for (coef, ks), facs in sorted(groups.items(), key=gkey):
        facs = sorted(facs, key=lambda fs: (len(fs), tuple(_factor_key(f) for f in fs)))
        body = "+".join("".join(f.abbrev() for f in fs) for fs in facs)
        if len(facs) > 1:
            body = "{" + body + "}" if coef != 1 else "(" + body + ")"
        thetas = [f"Θ_{{{k},{n}}}" for k in ks]
        th = thetas[0] if len(thetas) == 1 else "(" + "+".join(thetas) + ")"
        rendered.append(f"{_fmt_coef(coef)}{body} {th}")
    return "Σ_part " + " + ".join(rendered)


_TOKEN = re.compile(
    r"\s*(?:(Σ_part)|Θ_\{(\d+),(\d+)\}|\((\d+)\)|(\d+/\d+|\d+)|([(){}+]))"
)


def _tokens(text: str):
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ValueError(f"cannot parse abbreviation at {text[pos:pos + 20]!r}")
        pos = m.end()
        if m.group(1):
            continue
        if m.group(2):
            yield ("theta", (int(m.group(2)), int(m.group(3))))
        elif m.group(4):
            yield ("factor", tuple(int(c) for c in m.group(4)))
        elif m.group(5):
            yield ("coef", Fraction(m.group(5)))
        else:
            yield ("punct", m.group(6))


def parse_abbrev(text: str) -> dict[tuple, Fraction]:
    """Parse ``Σ_part``-style notation into ``{(k, factors): coefficient}``.

    Accepts the grouping forms produced by :func:`render_W` as well as
    hand-transcribed variants (parenthesised or braced term groups, single or
    summed energy-ordering functions, groups in any order).
    """
    toks = list(_tokens(text))
    i = 0
    out: dict[tuple, Fraction] = {}

    def peek():
        return toks[i] if i < len(toks) else (None, None)

    def term():
        nonlocal i
        facs = []
        while peek()[0] == "factor":
            idx = peek()[1]
            facs.append(TwoPointFactor(*idx) if len(idx) == 2 else ConjoinedFactor(idx))
            i += 1
        if not facs:
            raise ValueError(f"expected a factor near token {i}")
        return canonical_factors(facs)

    while i < len(toks):
        coef = Fraction(1)
        if peek()[0] == "coef":
            coef = peek()[1]
            i += 1
        kind, val = peek()
        if kind == "punct" and val in "({":
            close = ")" if val == "(" else "}"
            i += 1
            body = [term()]
            while peek() == ("punct", "+"):
                i += 1
                body.append(term())
            if peek() != ("punct", close):
                raise ValueError(f"unbalanced group near token {i}")
            i += 1
        else:
            body = [term()]
        kind, val = peek()
        thetas = []
        if kind == "theta":
            thetas.append(val)
            i += 1
        elif kind == "punct" and val == "(":
            i += 1
            while True:
                kind, val = peek()
                if kind != "theta":
                    raise ValueError("expected an energy-ordering function")
                thetas.append(val)
                i += 1
                if peek() == ("punct", "+"):
                    i += 1
                    continue
                break
            if peek() != ("punct", ")"):
                raise ValueError("unbalanced energy-ordering sum")
            i += 1
        else:
            raise ValueError(f"group without energy-ordering function near token {i}")
        for k, _n in thetas:
            for facs in body:
                key = (k, facs)
                out[key] = out.get(key, Fraction(0)) + coef
        if peek() == ("punct", "+"):
            i += 1
    return out


def canonical_abbrev_content(tl: TermList) -> dict[tuple, Fraction]:
    """``{(k, factors): coefficient}`` for the canonical placements of ``tl``."""
    out = {}
    for t in tl.terms:
        k = len(t.negatives)
        if t.negatives == frozenset(range(1, k + 1)):
            out[(k, t.factors)] = t.coefficient
    return out


def numeric_coefficients(tl: TermList) -> np.ndarray:
    return np.array([float(t.coefficient) for t in tl.terms])


@dataclass(frozen=True)
class MomentMeasure:
    """Atomic nonnegative measure ``sum_i w_i delta(lambda - lambda_i)``.

    ``c(n)`` is its n-th moment, the strength of an n-argument conjoined factor.
    """

    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        atoms = tuple((float(lam), float(w)) for lam, w in self.atoms)
        for lam, w in atoms:
            if not (w >= 0 and math.isfinite(w) and math.isfinite(lam)):
                raise ValueError(f"atom ({lam}, {w}) must have finite lambda and nonnegative weight")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def empty(cls) -> "MomentMeasure":
        return cls(())

    def c(self, n: int) -> float:
        if n < 0:
            raise ValueError("moment order must be nonnegative")
        return float(sum(w * lam**n for lam, w in self.atoms))

    def scaled(self, factor: float) -> "MomentMeasure":
        return MomentMeasure(tuple((lam, w * factor) for lam, w in self.atoms))

    @property
    def is_free(self) -> bool:
        return all(w == 0 for _, w in self.atoms)
