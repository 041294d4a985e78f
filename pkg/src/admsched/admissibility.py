"""Particle configurations and the admissibility function ``F``.

Two interference models ship:

* :class:`PairwiseDistance` -- the protocol model on the circle: particles may
  be removed together iff they are pairwise at least ``r`` apart.
* :class:`RegionGraph` -- ``K`` equal arcs with a conflict graph between them;
  at most one particle per arc and occupied arcs must be independent.

Both are monotone (every subset of an admissible set is admissible).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .geometry import (
    SCALE,
    CheckResult,
    Partition,
    build_partition,
    circ_distance,
    contiguous_partition,
    forbidden_size,
    min_region_distance,
    mu_for_radius,
    radius_ticks,
    ticks_array,
)


def _splice(arr: np.ndarray, pos: list[int], values: np.ndarray) -> np.ndarray:
    """``np.insert`` for a short, non-decreasing ``pos`` without its overhead."""
    out = np.empty(len(arr) + len(values), dtype=arr.dtype)
    prev = 0
    for j, p in enumerate(pos):
        out[prev + j : p + j] = arr[prev:p]
        out[p + j] = values[j]
        prev = p
    out[prev + len(pos) :] = arr[prev:]
    return out


class Configuration:
    """A finite multiset of particles, sorted by ``(location, id)``.

    ``ticks`` are grid locations (``location = tick / 2**53``); ``ids`` are
    unique integers.  Instances are treated as immutable.
    """

    __slots__ = ("ticks", "ids", "parent", "added")

    def __init__(self, ticks=(), ids=None, *, presorted: bool = False):
        ticks = np.asarray(ticks, dtype=np.int64)
        if ids is None:
            ids = np.arange(len(ticks), dtype=np.int64)
        ids = np.asarray(ids, dtype=np.int64)
        if ticks.shape != ids.shape:
            raise ValueError("ticks and ids must have the same length")
        if not presorted and len(ticks) > 1:
            order = np.lexsort((ids, ticks))
            ticks, ids = ticks[order], ids[order]
            if np.any(np.diff(ids[np.argsort(ids)]) == 0):
                raise ValueError("particle ids must be unique")
        self.ticks = ticks
        self.ids = ids
        # set by ``inserted``: the configuration this one extends, and the new ticks
        self.parent: Configuration | None = None
        self.added: np.ndarray | None = None

    @classmethod
    def from_locations(cls, locations: Iterable[float], ids: Sequence[int] | None = None) -> "Configuration":
        return cls(ticks_array(locations), ids)

    @classmethod
    def empty(cls) -> "Configuration":
        return cls(np.empty(0, np.int64), np.empty(0, np.int64), presorted=True)

    @property
    def locations(self) -> np.ndarray:
        return self.ticks / SCALE

    def __len__(self) -> int:
        return len(self.ticks)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return np.array_equal(self.ticks, other.ticks) and np.array_equal(self.ids, other.ids)

    def __repr__(self) -> str:
        locs = ", ".join(f"{i}@{x:.6g}" for i, x in zip(self.ids.tolist(), self.locations.tolist()))
        return f"Configuration([{locs}])"

    def particles(self) -> list[tuple[int, float]]:
        return list(zip(self.ids.tolist(), self.locations.tolist()))

    def subset(self, indices) -> "Configuration":
        idx = np.sort(np.asarray(indices, dtype=np.int64))
        return Configuration(self.ticks[idx], self.ids[idx], presorted=True)

    def subset_ids(self, ids: Iterable[int]) -> "Configuration":
        mask = np.isin(self.ids, np.fromiter(ids, dtype=np.int64))
        return Configuration(self.ticks[mask], self.ids[mask], presorted=True)

    def without(self, indices) -> "Configuration":
        drop = sorted(set(int(i) for i in np.atleast_1d(indices).tolist()))
        if not drop:
            return self
        if drop[0] < 0 or drop[-1] >= len(self):
            raise IndexError("particle position out of range")
        cuts = [0] + [j for i in drop for j in (i, i + 1)] + [len(self)]
        spans = [slice(a, b) for a, b in zip(cuts[::2], cuts[1::2])]
        return Configuration(
            np.concatenate([self.ticks[sl] for sl in spans]),
            np.concatenate([self.ids[sl] for sl in spans]),
            presorted=True,
        )

    def inserted(self, ticks, ids) -> "Configuration":
        """Add particles; ``ids`` must all exceed the ids already present."""
        ticks = np.asarray(ticks, dtype=np.int64)
        ids = np.asarray(ids, dtype=np.int64)
        if len(ticks) == 0:
            return self
        order = np.lexsort((ids, ticks))
        ticks, ids = ticks[order], ids[order]
        pos = np.searchsorted(self.ticks, ticks, side="right").tolist()
        out = Configuration(_splice(self.ticks, pos, ticks), _splice(self.ids, pos, ids), presorted=True)
        out.parent, out.added = self, ticks
        return out


@dataclass(frozen=True)
class PairwiseDistance:
    """Protocol model: removable together iff pairwise circular distance >= r."""

    r: float
    mu: int = field(init=False)
    forbid_size: int | None = field(init=False)
    r_ticks: int = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "mu", mu_for_radius(self.r))
        object.__setattr__(self, "forbid_size", forbidden_size(self.r))
        object.__setattr__(self, "r_ticks", radius_ticks(self.r))

    def partition(self, K: int | None = None) -> Partition:
        return build_partition(self.r, K)

    def compatible(self, x: float, w: float) -> bool:
        return circ_distance(x, w) >= self.r

    def admissible(self, y: Configuration) -> bool:
        n = len(y)
        if n == 0:
            return True
        if self.forbid_size is not None and n == self.forbid_size:
            return False
        locs = y.locations.tolist()
        return all(self.compatible(a, b) for a, b in itertools.combinations(locs, 2))

    def guaranteed(self, p: Partition, S: frozenset[int]) -> bool:
        if len(S) > self.mu:
            return False
        r = Fraction(self.r)
        return all(min_region_distance(p, i, j) >= r for i, j in itertools.combinations(sorted(S), 2))

    def region_exclusivity_check(self, p: Partition) -> CheckResult:
        r = Fraction(self.r)
        wide = [i for i in range(1, len(p.regions) + 1) if p.length(i) > r]
        return CheckResult(
            "region_exclusivity",
            not wide,
            f"regions longer than r: {wide[:5]}" if wide else "",
        )

    def extra_checks(self, p: Partition) -> list[CheckResult]:
        ok = self.mu == mu_for_radius(self.r) and self.forbid_size == forbidden_size(self.r)
        out = [CheckResult("mu_rule", ok, f"mu={self.mu}, forbid_size={self.forbid_size}")]
        if self.forbid_size is not None:
            k = self.forbid_size
            step = SCALE // k
            feasible = step >= self.r_ticks and SCALE - (k - 1) * step >= self.r_ticks
            if feasible:
                witness = Configuration([j * step for j in range(k)])
                out.append(
                    CheckResult(
                        "forbidden_size",
                        not self.admissible(witness),
                        f"{k} evenly spaced particles must be rejected",
                    )
                )
            else:
                out.append(
                    CheckResult("forbidden_size", True, f"size {k} unreachable at this r")
                )
        return out


def _independent_sets(K: int, adj: list[int]) -> list[frozenset[int]]:
    out = []
    for mask in range(1 << K):
        ok = True
        m = mask
        while m:
            low = m & -m
            i = low.bit_length() - 1
            if adj[i] & mask:
                ok = False
                break
            m ^= low
        if ok:
            out.append(frozenset(i + 1 for i in range(K) if mask >> i & 1))
    return out


@dataclass(frozen=True)
class RegionGraph:
    """``K`` equal arcs ``[(i-1)/K, i/K)`` with a conflict graph between arcs.

    ``mu`` is the independence number of the graph; the constructor checks
    that ``mu`` divides ``K`` and that every block of ``mu`` consecutive arcs
    is independent.
    """

    K: int
    conflict_edges: frozenset = frozenset()
    mu: int = field(init=False)
    independent_sets: tuple[frozenset[int], ...] = field(init=False, repr=False)
    _adj: tuple[int, ...] = field(init=False, repr=False)

    MAX_K = 20

    def __post_init__(self):
        if not 1 <= self.K <= self.MAX_K:
            raise ValueError(f"RegionGraph supports 1 <= K <= {self.MAX_K}, got {self.K}")
        edges = set()
        for a, b in self.conflict_edges:
            a, b = int(a), int(b)
            if a == b or not (1 <= a <= self.K and 1 <= b <= self.K):
                raise ValueError(f"bad conflict edge ({a}, {b})")
            edges.add((min(a, b), max(a, b)))
        adj = [0] * self.K
        for a, b in edges:
            adj[a - 1] |= 1 << (b - 1)
            adj[b - 1] |= 1 << (a - 1)
        indep = _independent_sets(self.K, adj)
        mu = max(len(s) for s in indep)
        object.__setattr__(self, "conflict_edges", frozenset(edges))
        object.__setattr__(self, "_adj", tuple(adj))
        object.__setattr__(self, "independent_sets", tuple(indep))
        object.__setattr__(self, "mu", mu)
        if self.K % mu:
            raise ValueError(f"independence number {mu} does not divide K={self.K}")
        for start in range(1, self.K + 1, mu):
            if not self.independent(range(start, start + mu)):
                raise ValueError(f"block {list(range(start, start + mu))} is not independent")

    def independent(self, S: Iterable[int]) -> bool:
        mask = 0
        for k in S:
            mask |= 1 << (k - 1)
        return not any(self._adj[k - 1] & mask for k in S)

    def partition(self, K: int | None = None) -> Partition:
        if K is not None and K != self.K:
            raise ValueError("a RegionGraph fixes its own K")
        return contiguous_partition(self.K, self.mu)

    def regions_of(self, y: Configuration) -> list[int]:
        return [(int(t) * self.K >> 53) + 1 for t in y.ticks.tolist()]

    def admissible(self, y: Configuration) -> bool:
        regions = self.regions_of(y)
        if len(set(regions)) != len(regions):
            return False
        return self.independent(regions)

    def guaranteed(self, p: Partition, S: frozenset[int]) -> bool:
        return self.independent(S)

    def region_exclusivity_check(self, p: Partition) -> CheckResult:
        own = contiguous_partition(self.K, self.mu)
        same = p.regions == own.regions
        return CheckResult("region_exclusivity", same, "" if same else "partition is not the model's arc layout")

    def extra_checks(self, p: Partition) -> list[CheckResult]:
        return []


AdmissibilityModel = PairwiseDistance | RegionGraph


def is_admissible(model: AdmissibilityModel, subset: Configuration) -> bool:
    return model.admissible(subset)


def max_admissible_size(model: AdmissibilityModel) -> int:
    return model.mu
