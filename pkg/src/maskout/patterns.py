"""Exact algebra over response patterns.

A response pattern records which of the d study variables are observed for a
row. Patterns are bit-packed into a Python int (bit j set <=> variable j
observed), which keeps masking/unmasking and subset enumeration exact and
cheap for d <= 64. The text form is the big-endian bit string used in data
tables: variable 1 is the leftmost character, so "101" means variables 1 and 3
observed, variable 2 missing.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

MAX_D = 64

__all__ = [
    "ResponsePattern",
    "mask",
    "unmask",
    "maskable_subsets",
    "donor_patterns",
    "all_patterns",
]


@dataclass(frozen=True, order=True)
class ResponsePattern:
    """Immutable bitset of observed variables. Ordering is by (d, bits)."""

    d: int
    bits: int

    def __post_init__(self):
        if not 1 <= self.d <= MAX_D:
            raise ValueError(f"d must be in [1, {MAX_D}], got {self.d}")
        if not 0 <= self.bits < (1 << self.d):
            raise ValueError(f"bits {self.bits:#x} out of range for d={self.d}")

    @classmethod
    def from_string(cls, s: str) -> "ResponsePattern":
        """Parse the big-endian text form, e.g. "101" (variable 1 leftmost)."""
        if not s or any(c not in "01" for c in s):
            raise ValueError(f"not a bit string: {s!r}")
        bits = 0
        for j, c in enumerate(s):
            if c == "1":
                bits |= 1 << j
        return cls(d=len(s), bits=bits)

    @classmethod
    def from_indices(cls, d: int, indices) -> "ResponsePattern":
        bits = 0
        for j in indices:
            if not 0 <= j < d:
                raise IndexError(f"variable index {j} out of range for d={d}")
            bits |= 1 << j
        return cls(d=d, bits=bits)

    @classmethod
    def full(cls, d: int) -> "ResponsePattern":
        return cls(d=d, bits=(1 << d) - 1)

    @classmethod
    def empty(cls, d: int) -> "ResponsePattern":
        return cls(d=d, bits=0)

    def to_string(self) -> str:
        return "".join("1" if self.is_observed(j) else "0" for j in range(self.d))

    def __str__(self) -> str:
        return self.to_string()

    def is_observed(self, j: int) -> bool:
        self._check_index(j)
        return bool((self.bits >> j) & 1)

    def observed_indices(self) -> tuple[int, ...]:
        return tuple(j for j in range(self.d) if (self.bits >> j) & 1)

    def missing_indices(self) -> tuple[int, ...]:
        return tuple(j for j in range(self.d) if not (self.bits >> j) & 1)

    def weight(self) -> int:
        """Number of observed variables |r|."""
        return self.bits.bit_count()

    def complement(self) -> "ResponsePattern":
        return ResponsePattern(d=self.d, bits=self.bits ^ ((1 << self.d) - 1))

    def is_subset_of(self, other: "ResponsePattern") -> bool:
        self._check_same_d(other)
        return (self.bits & ~other.bits) == 0

    def is_prefix(self) -> bool:
        """True when the pattern has the monotone form 1...10...0."""
        t = self.weight()
        return self.bits == (1 << t) - 1

    def mask(self, j: int) -> "ResponsePattern":
        return mask(self, j)

    def unmask(self, j: int) -> "ResponsePattern":
        return unmask(self, j)

    def _check_index(self, j: int):
        if not 0 <= j < self.d:
            raise IndexError(f"variable index {j} out of range for d={self.d}")

    def _check_same_d(self, other: "ResponsePattern"):
        if self.d != other.d:
            raise ValueError(f"pattern lengths differ: {self.d} vs {other.d}")


def mask(r: ResponsePattern, j: int) -> ResponsePattern:
    """Clear bit j (pretend variable j is missing). Bit j must be set."""
    r._check_index(j)
    if not r.is_observed(j):
        raise ValueError(f"cannot mask variable {j}: already missing in {r}")
    return ResponsePattern(d=r.d, bits=r.bits & ~(1 << j))


def unmask(r: ResponsePattern, j: int) -> ResponsePattern:
    """Set bit j (variable j becomes observed). Bit j must be clear."""
    r._check_index(j)
    if r.is_observed(j):
        raise ValueError(f"cannot unmask variable {j}: already observed in {r}")
    return ResponsePattern(d=r.d, bits=r.bits | (1 << j))


def _sorted_patterns(d: int, bits_iterable) -> tuple[ResponsePattern, ...]:
    return tuple(ResponsePattern(d=d, bits=b) for b in sorted(set(bits_iterable)))


def maskable_subsets(r: ResponsePattern, K: int) -> tuple[ResponsePattern, ...]:
    """All nonzero subpatterns of r with weight <= K, ascending by bit value.

    These are the candidate sets of entries that can be masked jointly when at
    most K variables are masked at a time; the cardinality is
    sum_{k=1..min(K,|r|)} C(|r|, k).
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    observed = r.observed_indices()
    bits = []
    for k in range(1, min(K, len(observed)) + 1):
        for combo in itertools.combinations(observed, k):
            b = 0
            for j in combo:
                b |= 1 << j
            bits.append(b)
    return _sorted_patterns(r.d, bits)


def donor_patterns(r: ResponsePattern, j: int, K: int) -> tuple[ResponsePattern, ...]:
    """All patterns s >= r+e_j with at most K extra observations relative to r.

    These are the patterns whose rows can contribute to imputing variable j
    of an observation with pattern r when up to K variables are masked at
    once. K = d gives every superset of r+e_j.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if r.is_observed(j):
        raise ValueError(f"variable {j} is observed in {r}; no donor set")
    base = unmask(r, j)
    free = base.complement().observed_indices()
    bits = []
    for extra in range(0, min(K - 1, len(free)) + 1):
        for combo in itertools.combinations(free, extra):
            b = base.bits
            for k in combo:
                b |= 1 << k
            bits.append(b)
    return _sorted_patterns(r.d, bits)


def all_patterns(d: int) -> tuple[ResponsePattern, ...]:
    """Every pattern of length d, ascending. Intended for small d (tests)."""
    return tuple(ResponsePattern(d=d, bits=b) for b in range(1 << d))
