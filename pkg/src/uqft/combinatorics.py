"""Enumeration of pairings, set partitions, subsets and permutations.

All index sets are 1-based to match the notation used for n-point
arguments, e.g. the pairing ``((1, 3), (2, 4))``.  Every enumerator returns
its objects in a canonical total order so repeated calls give identical
lists.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Hashable, Iterable, Mapping, Sequence, TypeVar

K = TypeVar("K", bound=Hashable)

PARTITION_CAP = 10
SYMMETRIZER_CAP = 8


class CapExceeded(ValueError):
    """Requested enumeration is larger than the configured cap."""


@dataclass(frozen=True, order=True)
class Pairing:
    pairs: tuple[tuple[int, int], ...]

    @property
    def n(self) -> int:
        return 2 * len(self.pairs)


@dataclass(frozen=True, order=True)
class SetPartition:
    blocks: tuple[tuple[int, ...], ...]

    @property
    def n(self) -> int:
        return sum(len(b) for b in self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)


SignPattern = tuple[int, ...]


def _pairings_of(items: tuple[int, ...]) -> list[tuple[tuple[int, int], ...]]:
    if not items:
        return [()]
    first, rest = items[0], items[1:]
    out = []
    for i, partner in enumerate(rest):
        remaining = rest[:i] + rest[i + 1:]
        for tail in _pairings_of(remaining):
            out.append(((first, partner),) + tail)
    return out


def enumerate_pairings(n: int) -> list[Pairing]:
    """All perfect matchings of ``{1..n}``; empty for odd ``n``.

    ``n == 0`` has the single empty pairing.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n % 2:
        return []
    return [Pairing(p) for p in _pairings_of(tuple(range(1, n + 1)))]


def count_pairings(n: int) -> int:
    if n % 2:
        return 0
    half = n // 2
    return math.factorial(n) // (2**half * math.factorial(half))


def _check_partition_size(n: int, cap: int) -> None:
    if n < 1:
        raise ValueError("n must be at least 1")
    if n > cap:
        raise CapExceeded(f"set partitions of n={n} exceed cap {cap}")


def enumerate_partitions(n: int, cap: int = PARTITION_CAP) -> list[SetPartition]:
    """All set partitions of ``{1..n}`` ordered by block count, then canonically.

    Blocks are ascending and sorted by their smallest element.
    """
    _check_partition_size(n, cap)
    return [p for group in _partitions_grouped(n).values() for p in group]


def _partitions_grouped(n: int) -> dict[int, list[SetPartition]]:
    blocks: list[list[int]] = []
    buckets: dict[int, list[tuple[tuple[int, ...], ...]]] = {}

    # place element i into each existing block or a new one; blocks stay
    # ascending and ordered by smallest element
    def rec(i: int):
        if i > n:
            buckets.setdefault(len(blocks), []).append(tuple(map(tuple, blocks)))
            return
        for blk in blocks:
            blk.append(i)
            rec(i + 1)
            blk.pop()
        blocks.append([i])
        rec(i + 1)
        blocks.pop()

    rec(1)
    return {k: [SetPartition(b) for b in sorted(buckets[k])] for k in sorted(buckets)}


def partitions_by_block_count(n: int, cap: int = PARTITION_CAP) -> dict[int, list[SetPartition]]:
    _check_partition_size(n, cap)
    return _partitions_grouped(n)


def theta_eval(k: int, signs: Sequence[int]) -> int:
    """Energy-ordering indicator: 1 iff the first ``k`` signs are negative
    and the remaining ones positive."""
    n = len(signs)
    if not 0 <= k <= n:
        raise ValueError(f"k={k} outside 0..{n}")
    for s in signs:
        if s not in (1, -1):
            raise ValueError(f"sign entries must be +1 or -1, got {s!r}")
    return int(all(s == -1 for s in signs[:k]) and all(s == 1 for s in signs[k:]))


def partition_subsets(n: int, k: int) -> list[tuple[int, ...]]:
    """The ``k``-subsets of ``{1..n}`` in lexicographic order."""
    if not 0 <= k <= n:
        raise ValueError(f"k={k} outside 0..{n}")
    return list(itertools.combinations(range(1, n + 1), k))


def sign_pattern(n: int, negatives: Iterable[int]) -> SignPattern:
    neg = set(negatives)
    return tuple(-1 if i in neg else 1 for i in range(1, n + 1))


def symmetrized_theta(k: int, signs: Sequence[int]) -> Fraction:
    """``S[Theta_{k,n}]`` at a fixed sign pattern: the fraction of argument
    permutations that bring the pattern to ``k`` negatives followed by
    positives."""
    n = len(signs)
    theta_eval(0, signs)  # validates entries
    if sum(1 for s in signs if s < 0) != k:
        return Fraction(0)
    return Fraction(math.factorial(k) * math.factorial(n - k), math.factorial(n))


def theta_partition_of_unity(signs: Sequence[int]) -> Fraction:
    """``sum_k C(n,k) S[Theta_{k,n}]``, identically 1 for nonzero energies."""
    n = len(signs)
    return sum(
        (math.comb(n, k) * symmetrized_theta(k, signs) for k in range(n + 1)),
        Fraction(0),
    )


def permute_indices(indices: Sequence[int], perm: Sequence[int]) -> tuple[int, ...]:
    """Relabel 1-based ``indices`` through ``perm`` (``i -> perm[i-1]``)."""
    return tuple(perm[i - 1] for i in indices)


def symmetrize(
    weights: Mapping[K, Fraction],
    n: int,
    act: Callable[[K, tuple[int, ...]], K] | None = None,
    cap: int = SYMMETRIZER_CAP,
) -> dict[K, Fraction]:
    """Normalized symmetrizer ``(1/n!) sum_pi T o pi`` over a weighted term map.

    ``act(key, perm)`` relabels a key under a permutation of ``1..n``; by
    default keys are index tuples relabeled elementwise.
    """
    if n > cap:
        raise CapExceeded(f"symmetrizer over n={n} exceeds cap {cap}")
    if act is None:
        act = permute_indices  # type: ignore[assignment]
    norm = Fraction(1, math.factorial(n))
    out: dict[K, Fraction] = {}
    for perm in itertools.permutations(range(1, n + 1)):
        for key, w in weights.items():
            new = act(key, perm)
            out[new] = out.get(new, Fraction(0)) + w * norm
    return {k: v for k, v in out.items() if v != 0}
