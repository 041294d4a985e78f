"""Circle geometry and the equal-measure partition used by the diagnostics.

Locations live on the unit circle, written as points of ``[0, 1)``.  Internally
every location is snapped to the grid ``k / 2**53``: on that grid differences
and ``1 - d`` are exact in double precision, so every distance comparison made
by the samplers agrees bit-for-bit with :func:`circ_distance`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

SCALE = 1 << 53
_INT_TOL = 1e-9


def to_ticks(x: float) -> int:
    """Reduce ``x`` mod 1 and return its grid index in ``[0, 2**53)``."""
    x = float(x) % 1.0
    return int(round(x * SCALE)) % SCALE


def ticks_array(xs: Iterable[float]) -> np.ndarray:
    if not hasattr(xs, "__len__"):
        xs = list(xs)
    xs = np.mod(np.asarray(xs, dtype=float), 1.0)
    return np.mod(np.rint(xs * SCALE).astype(np.int64), SCALE)


def snap(x: float) -> float:
    """The grid point closest to ``x mod 1``."""
    return to_ticks(x) / SCALE


def radius_ticks(r: float) -> int:
    """Smallest tick count ``R`` with ``d >= r  <=>  ticks(d) >= R`` for grid distances."""
    return math.ceil(Fraction(r) * SCALE)


def circ_distance(x: float, w: float) -> float:
    d = abs(x - w)
    return min(d, 1.0 - d)


def _integral_inverse(r: float) -> int | None:
    inv = 1.0 / r
    k = round(inv)
    if abs(inv - k) <= _INT_TOL * k:
        return int(k)
    return None


def mu_for_radius(r: float) -> int:
    """Maximum number of particles that may be removed together at radius ``r``.

    ``floor(1/r)`` in general; when ``1/r`` is an integer, sets of that size are
    forbidden and the cap drops to ``1/r - 1``.
    """
    if not 0.0 < r < 1.0:
        raise ValueError(f"r must lie in (0, 1), got {r!r}")
    k = _integral_inverse(r)
    if k is not None:
        return k - 1
    return math.floor(1.0 / r)


def forbidden_size(r: float) -> int | None:
    """``1/r`` when it is an integer, else ``None``."""
    if not 0.0 < r < 1.0:
        raise ValueError(f"r must lie in (0, 1), got {r!r}")
    return _integral_inverse(r)


def _nominal(r: float) -> Fraction:
    # the decimal the user wrote (0.49 -> 49/100), not the binary float
    return Fraction(repr(float(r)))


@dataclass(frozen=True)
class Partition:
    """``K`` half-open regions of the circle plus the blocks ``S_1..S_K``.

    Region and block indices are 1-based.  ``regions[i - 1] = (start, end)``
    with exact rational endpoints.  Nothing is validated here; see
    :func:`validate_partition`.
    """

    K: int
    mu: int
    regions: tuple[tuple[Fraction, Fraction], ...]
    blocks: tuple[frozenset[int], ...]
    _order: np.ndarray = field(init=False, repr=False, compare=False)
    _start_ticks: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        starts = [Fraction(a) for a, _ in self.regions]
        order = np.argsort(np.array([float(s) for s in starts]), kind="stable")
        start_ticks = np.array(
            [math.ceil(starts[i] * SCALE) for i in order], dtype=np.int64
        )
        object.__setattr__(self, "_order", order)
        object.__setattr__(self, "_start_ticks", start_ticks)

    def length(self, i: int) -> Fraction:
        a, b = self.regions[i - 1]
        return b - a

    def region_indices(self, ticks: np.ndarray) -> np.ndarray:
        """Vectorised :func:`region_of` on grid ticks (returns 1-based indices)."""
        pos = np.searchsorted(self._start_ticks, np.asarray(ticks, dtype=np.int64), side="right") - 1
        return self._order[pos] + 1

    @property
    def distinct_blocks(self) -> list[frozenset[int]]:
        seen: list[frozenset[int]] = []
        for b in self.blocks:
            if b not in seen:
                seen.append(b)
        return seen


def interleaved_bounds(K: int, mu: int, i: int) -> tuple[Fraction, Fraction]:
    """Endpoints of region ``i``: consecutive indices sit ``1/mu`` apart."""
    m = (i - 1) // mu
    j = (i - 1) % mu
    start = m + (K // mu) * j
    return Fraction(start, K), Fraction(start + 1, K)


def block_of(i: int, mu: int) -> frozenset[int]:
    top = -(-i // mu) * mu
    return frozenset(top - j for j in range(mu))


def min_partition_size(r: float) -> int:
    mu = mu_for_radius(r)
    slack = 1 - mu * _nominal(r)
    if slack <= 0:
        raise ValueError(f"1 - mu*r must be positive (r={r}, mu={mu})")
    bound = Fraction(2 * mu) / slack
    return mu * math.ceil(bound / mu)


def build_partition(r: float, K: int | None = None) -> Partition:
    """Interleaved partition for the protocol model at radius ``r``.

    Without ``K`` the smallest admissible multiple of ``mu`` is used.
    """
    mu = mu_for_radius(r)
    k_min = min_partition_size(r)
    if K is None:
        K = k_min
    else:
        if K % mu:
            raise ValueError(f"K={K} is not a multiple of mu={mu}")
        if K < k_min:
            raise ValueError(f"K={K} is below the minimum {k_min} for r={r}")
    regions = tuple(interleaved_bounds(K, mu, i) for i in range(1, K + 1))
    blocks = tuple(block_of(i, mu) for i in range(1, K + 1))
    return Partition(K=K, mu=mu, regions=regions, blocks=blocks)


def contiguous_partition(K: int, mu: int) -> Partition:
    """``P_i = [(i-1)/K, i/K)`` with blocks of ``mu`` consecutive indices."""
    regions = tuple((Fraction(i - 1, K), Fraction(i, K)) for i in range(1, K + 1))
    blocks = tuple(block_of(i, mu) for i in range(1, K + 1))
    return Partition(K=K, mu=mu, regions=regions, blocks=blocks)


def region_of(p: Partition, x: float) -> int:
    return int(p.region_indices(np.array([to_ticks(x)]))[0])


def _closed_arc_distance(a1: Fraction, b1: Fraction, a2: Fraction, b2: Fraction) -> Fraction:
    if a2 < a1:
        a1, b1, a2, b2 = a2, b2, a1, b1
    if a2 <= b1:
        return Fraction(0)
    return min(a2 - b1, 1 - b2 + a1)


def min_region_distance(p: Partition, i: int, j: int) -> Fraction:
    """Exact circular distance between the closures of regions ``i`` and ``j``."""
    if i == j:
        raise ValueError("min_region_distance needs two distinct regions")
    a1, b1 = p.regions[i - 1]
    a2, b2 = p.regions[j - 1]
    return _closed_arc_distance(a1, b1, a2, b2)


def is_guaranteed(p: Partition, model, S: Iterable[int]) -> bool:
    """True iff one particle anywhere in each region of ``S`` is always admissible."""
    return model.guaranteed(p, frozenset(S))


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]


def _cover_check(p: Partition) -> CheckResult:
    if len(p.regions) != p.K:
        return CheckResult("cover", False, f"{len(p.regions)} regions for K={p.K}")
    bad = [i for i in range(1, p.K + 1) if p.length(i) != Fraction(1, p.K)]
    if bad:
        return CheckResult("cover", False, f"regions {bad[:5]} do not have measure 1/K")
    spans = sorted(p.regions)
    if spans[0][0] != 0 or spans[-1][1] != 1:
        return CheckResult("cover", False, "regions do not span [0, 1)")
    for (a1, b1), (a2, b2) in zip(spans, spans[1:]):
        if b1 != a2:
            return CheckResult("cover", False, f"gap or overlap at {float(b1)}")
    return CheckResult("cover", True)


def validate_partition(p: Partition, model) -> ValidationReport:
    """Check the partition against the model; failures are reported, not raised."""
    checks = [_cover_check(p)]
    mu = model.mu
    checks.append(
        CheckResult(
            "divisibility",
            p.K % mu == 0 and p.mu == mu,
            f"K={p.K}, partition mu={p.mu}, model mu={mu}",
        )
    )
    bad_blocks = [
        sorted(b)
        for b in p.distinct_blocks
        if len(b) != mu or not model.guaranteed(p, b)
    ]
    checks.append(
        CheckResult(
            "blocks_guaranteed",
            not bad_blocks and len(p.blocks) == p.K,
            f"bad blocks: {bad_blocks[:3]}" if bad_blocks else "",
        )
    )
    checks.append(model.region_exclusivity_check(p))
    checks.extend(model.extra_checks(p))
    return ValidationReport(checks)
