"""Exact arithmetic for periods, dual lattices, coset shifts and fundamental domains.

Dual points are stored as integer numerators over a period. Equality and
addition go through :class:`fractions.Fraction`, so coset bookkeeping never
depends on floating-point rounding. The canonical order of a dual lattice is
lexicographic in the numerators (C order), and every matrix or vector index in
the package refers to that order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import DivisibilityViolation, PeriodOverflow, ShapeMismatch

INDEX_LIMIT = 2**62


@dataclass(frozen=True)
class Period:
    components: tuple[int, ...]

    def __post_init__(self):
        comps = tuple(int(c) for c in self.components)
        if not comps:
            raise ShapeMismatch("a period needs at least one component")
        if any(c != orig for c, orig in zip(comps, self.components)):
            raise ShapeMismatch(f"period components must be integers, got {self.components!r}")
        if any(c < 1 for c in comps):
            raise ShapeMismatch(f"period components must be positive, got {comps}")
        size = 1
        for c in comps:
            size *= c
            if size > INDEX_LIMIT:
                raise PeriodOverflow(f"cell size of period {comps} exceeds {INDEX_LIMIT}")
        object.__setattr__(self, "components", comps)

    @classmethod
    def of(cls, value: "Period | Iterable[int] | int") -> "Period":
        if isinstance(value, Period):
            return value
        if isinstance(value, (int, np.integer)):
            return cls((int(value),))
        return cls(tuple(value))

    @property
    def d(self) -> int:
        return len(self.components)

    @property
    def size(self) -> int:
        """P = p_1 * ... * p_d."""
        return math.prod(self.components)

    def __iter__(self):
        return iter(self.components)

    def __len__(self):
        return len(self.components)

    def __getitem__(self, i):
        return self.components[i]

    def divides(self, other: "Period") -> bool:
        return self.d == other.d and all(b % a == 0 for a, b in zip(self, other))

    def ratio(self, fine: "Period") -> tuple[int, ...]:
        """Componentwise ``fine / self``; raises if ``self`` does not divide ``fine``."""
        if self.d != fine.d:
            raise ShapeMismatch(f"dimension mismatch: {self.d} vs {fine.d}")
        for axis, (a, b) in enumerate(zip(self, fine), start=1):
            if b % a:
                raise DivisibilityViolation(1, axis, f"{a} does not divide {b} along axis {axis}")
        return tuple(b // a for a, b in zip(self, fine))


@dataclass(frozen=True)
class PeriodTower:
    periods: tuple[Period, ...]

    def __len__(self):
        return len(self.periods)

    def __getitem__(self, j):
        return self.periods[j]

    def __iter__(self):
        return iter(self.periods)

    @property
    def d(self) -> int:
        return self.periods[0].d


def make_period_tower(periods: Sequence) -> PeriodTower:
    if len(periods) == 0:
        raise ShapeMismatch("a period tower needs at least one period")
    ps = tuple(Period.of(p) for p in periods)
    d = ps[0].d
    for p in ps:
        if p.d != d:
            raise ShapeMismatch(f"all periods must have dimension {d}, got {p.components}")
    for level, (a, b) in enumerate(zip(ps, ps[1:]), start=1):
        for axis, (pa, pb) in enumerate(zip(a, b), start=1):
            if pb % pa:
                raise DivisibilityViolation(level, axis)
    return PeriodTower(ps)


@dataclass(frozen=True, eq=False)
class DualPoint:
    """The point (k_1/p_1, ..., k_d/p_d) of the torus with 0 <= k_j < p_j."""

    numerators: tuple[int, ...]
    period: Period

    def __post_init__(self):
        nums = tuple(int(k) for k in self.numerators)
        per = Period.of(self.period)
        if len(nums) != per.d:
            raise ShapeMismatch(f"{len(nums)} numerators for a {per.d}-dimensional period")
        for k, p in zip(nums, per):
            if not 0 <= k < p:
                raise ShapeMismatch(f"numerator {k} outside [0, {p - 1}]")
        object.__setattr__(self, "numerators", nums)
        object.__setattr__(self, "period", per)

    @classmethod
    def reduce(cls, numerators: Iterable[int], period) -> "DualPoint":
        per = Period.of(period)
        return cls(tuple(int(k) % p for k, p in zip(numerators, per)), per)

    def fractions(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(k, p) for k, p in zip(self.numerators, self.period))

    def as_float(self) -> np.ndarray:
        return np.array([k / p for k, p in zip(self.numerators, self.period)])

    def over(self, period) -> "DualPoint":
        """Re-express over a multiple of the current period (exact)."""
        per = Period.of(period)
        nums = []
        for f, p in zip(self.fractions(), per):
            k = f * p
            if k.denominator != 1:
                raise DivisibilityViolation(1, len(nums) + 1, f"{f} is not on the grid 1/{p}")
            nums.append(int(k))
        return DualPoint(tuple(nums), per)

    def __add__(self, other: "DualPoint") -> "DualPoint":
        common = Period(tuple(math.lcm(a, b) for a, b in zip(self.period, other.period)))
        a, b = self.over(common), other.over(common)
        return DualPoint.reduce((x + y for x, y in zip(a.numerators, b.numerators)), common)

    def __neg__(self) -> "DualPoint":
        return DualPoint.reduce((-k for k in self.numerators), self.period)

    def __eq__(self, other):
        if not isinstance(other, DualPoint):
            return NotImplemented
        return self.fractions() == other.fractions()

    def __hash__(self):
        return hash(self.fractions())

    def __repr__(self):
        return "DualPoint(" + ", ".join(str(f) for f in self.fractions()) + ")"

    @property
    def index(self) -> int:
        """Position in the canonical order of ``dual_lattice(self.period)``."""
        return int(np.ravel_multi_index(self.numerators, self.period.components))


CosetShift = DualPoint


def dual_numerators(p) -> np.ndarray:
    """Integer array of shape (P, d) listing the numerators of B_p in canonical order."""
    per = Period.of(p)
    grids = np.indices(per.components).reshape(per.d, -1)
    return grids.T.copy()


def dual_lattice(p) -> list[DualPoint]:
    per = Period.of(p)
    return [DualPoint(k, per) for k in itertools.product(*(range(c) for c in per))]


def coset_shifts(p_coarse, p_fine) -> list[DualPoint]:
    """Shifts s with numerators 0 <= s_k < p_fine_k / p_coarse_k over ``p_fine``."""
    coarse, fine = Period.of(p_coarse), Period.of(p_fine)
    ratios = coarse.ratio(fine)
    return [DualPoint(s, fine) for s in itertools.product(*(range(r) for r in ratios))]


def coset_decompose(k: DualPoint, p_coarse) -> tuple[DualPoint, DualPoint]:
    """Split a fine dual point as ``k = k_coarse + s`` with ``s`` a coset shift."""
    coarse = Period.of(p_coarse)
    ratios = coarse.ratio(k.period)
    s = tuple(n % r for n, r in zip(k.numerators, ratios))
    kc = tuple(n // r for n, r in zip(k.numerators, ratios))
    return DualPoint(s, k.period), DualPoint(kc, coarse)


def embedding_indices(p_coarse, p_fine) -> np.ndarray:
    """Fine canonical index of ``k' + s`` for every shift ``s`` and coarse point ``k'``.

    Returns an integer array of shape (number of shifts, P_coarse); rows follow
    the order of :func:`coset_shifts`, columns the canonical order of B_{p_coarse}.
    """
    coarse, fine = Period.of(p_coarse), Period.of(p_fine)
    ratios = np.array(coarse.ratio(fine))
    shifts = dual_numerators(Period(tuple(ratios)))
    kc = dual_numerators(coarse)
    fine_nums = kc[None, :, :] * ratios + shifts[:, None, :]
    flat = np.ravel_multi_index(tuple(fine_nums.reshape(-1, coarse.d).T), fine.components)
    return flat.reshape(len(shifts), len(kc))


@dataclass(frozen=True)
class Box:
    lower: tuple[Fraction, ...]
    upper: tuple[Fraction, ...]

    @property
    def volume(self) -> Fraction:
        return math.prod((u - l for l, u in zip(self.lower, self.upper)), start=Fraction(1))


def fundamental_domain(p) -> Box:
    """The half-open box prod_j [0, 1/p_j)."""
    per = Period.of(p)
    return Box(tuple(Fraction(0) for _ in per), tuple(Fraction(1, c) for c in per))
