"""Exact counting and uniform sampling of admissible particle subsets.

For the protocol model the particles are sorted by location and every
nonempty admissible set is indexed by its first particle (the *anchor*).
Sets anchored at ``a`` are chains ``a < i_2 < ... < i_s`` whose consecutive
gaps are at least ``r`` and whose last element stays within ``1 - r`` of
``a``.  Writing ``nxt(i)`` for the first particle at distance ``>= r`` after
``i`` and ``hi(a)`` for the last particle within ``1 - r`` of ``a``, the
number of ``k``-chains starting at ``i`` below a bound ``h`` satisfies

    c_1(i; h) = 1,   c_{k+1}(i; h) = sum_{j = nxt(i)}^{B_k(h)} c_k(j; h),

with ``B_k(h)`` the last index still able to start a ``k``-chain.  Each
``c_k(., h)`` is a short sum ``sum_t alpha_t(h) * beta_t(i)``, so the counts
for every anchor (each with its own ``h = hi(a)``) come out of prefix sums in
``O(mu^2 n log n)``.  Counts are exact: int64 when a magnitude bound allows,
Python integers otherwise.
"""
from __future__ import annotations

import bisect
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .admissibility import Configuration, PairwiseDistance, RegionGraph
from .geometry import SCALE, Partition

BRUTE_FORCE_LIMIT = 20
_SAFE = 1 << 61


class SizeLimitError(ValueError):
    pass


@dataclass(frozen=True)
class SubsetCount:
    total: int
    by_size: tuple[int, ...]


@dataclass(frozen=True)
class RemovalOutcome:
    """Positions (into the scheduled configuration) and ids of removed particles.

    ``remaining`` optionally carries the configuration left behind, when the
    scheduler built it anyway.
    """

    indices: tuple[int, ...]
    removed: frozenset[int]
    remaining: Configuration | None = field(default=None, compare=False, repr=False)

    @property
    def removed_count(self) -> int:
        return len(self.indices)

    @classmethod
    def none(cls) -> "RemovalOutcome":
        return cls((), frozenset())

    @classmethod
    def from_indices(
        cls, y: Configuration, indices: Sequence[int], remaining: Configuration | None = None
    ) -> "RemovalOutcome":
        idx = tuple(sorted(int(i) for i in indices))
        return cls(idx, frozenset(int(y.ids[i]) for i in idx), remaining)


def randbelow(rng: np.random.Generator, n: int) -> int:
    """Uniform integer in ``[0, n)`` for arbitrarily large ``n``."""
    if n <= 0:
        raise ValueError("n must be positive")
    if n < (1 << 63):
        return int(rng.integers(n))
    nbits = n.bit_length()
    nbytes = (nbits + 7) // 8
    while True:
        v = int.from_bytes(rng.bytes(nbytes), "little") >> (8 * nbytes - nbits)
        if v < n:
            return v


def _locate(cum, u: int) -> int:
    """First position whose cumulative weight exceeds ``u``."""
    if isinstance(cum, np.ndarray) and cum.dtype != object:
        return int(np.searchsorted(cum, u, side="right"))
    return bisect.bisect_right(list(cum), u)


class _CircleTables:
    """Per-anchor chain counts for the protocol model on one configuration."""

    def __init__(self, ticks: np.ndarray, r_ticks: int, mu: int):
        n = len(ticks)
        self.n = n
        self.mu = mu
        self.nxt = np.searchsorted(ticks, ticks + r_ticks, side="left")
        self.hi = np.searchsorted(ticks, ticks + (SCALE - r_ticks), side="right") - 1
        big = (mu + 1) * (n + 1) ** max(2 * mu - 2, 1) >= _SAFE
        self.dtype = object if big else np.int64
        one = np.ones(n, dtype=self.dtype)
        alphas, betas, B = [one], [one], self.hi.copy()
        self.levels = [(alphas, betas, B)]
        self.chain_counts = [None, one]
        idx = np.arange(n)
        for _ in range(1, mu):
            prefix = [np.concatenate((np.zeros(1, dtype=self.dtype), np.cumsum(b))) for b in betas]
            a0 = alphas[0] * prefix[0][B + 1]
            for a, P in zip(alphas[1:], prefix[1:]):
                a0 = a0 + a * P[B + 1]
            alphas = [a0] + [-a for a in alphas]
            betas = [one] + [P[self.nxt] for P in prefix]
            B = np.searchsorted(self.nxt, B, side="right") - 1
            c = alphas[0] * betas[0]
            for a, b in zip(alphas[1:], betas[1:]):
                c = c + a * b
            c = np.where(idx <= B, c, 0)
            if self.dtype is object:
                c = c.astype(object)
            self.levels.append((alphas, betas, B))
            self.chain_counts.append(c)

    def by_size(self) -> list[int]:
        return [1] + [int(sum(c.tolist())) if self.dtype is object else int(c.sum()) for c in self.chain_counts[1:]]

    def level_weights(self, k: int, anchor: int, lo: int, hi: int) -> np.ndarray:
        alphas, betas, _ = self.levels[k - 1]
        w = alphas[0][anchor] * betas[0][lo : hi + 1]
        for a, b in zip(alphas[1:], betas[1:]):
            w = w + a[anchor] * b[lo : hi + 1]
        return w

    def decode(self, s: int, u: int) -> list[int]:
        """The ``u``-th admissible set of size ``s`` (positions in sorted order)."""
        counts = self.chain_counts[s]
        cum = np.cumsum(counts)
        a = _locate(cum, u)
        if a > 0:
            u -= int(cum[a - 1])
        chosen = [a]
        cur = a
        for k in range(s - 1, 0, -1):
            lo = int(self.nxt[cur])
            top = int(self.levels[k - 1][2][a])
            w = self.level_weights(k, a, lo, top)
            wc = np.cumsum(w)
            j = _locate(wc, u)
            if j > 0:
                u -= int(wc[j - 1])
            cur = lo + j
            chosen.append(cur)
        return chosen


class AdmissibleSubsets:
    """All admissible subsets of one configuration: count, sample, marginals.

    Sampling draws one integer uniformly below the total count and decodes
    it, so each admissible subset has probability exactly ``1 / total``.
    """

    def __init__(self, model, y: Configuration):
        self.model = model
        self.y = y
        if isinstance(model, PairwiseDistance):
            self._tables = _CircleTables(y.ticks, model.r_ticks, model.mu) if len(y) else None
            by_size = self._tables.by_size() if self._tables else [1]
        elif isinstance(model, RegionGraph):
            self._tables = None
            self._regions = (y.ticks * model.K >> 53) + 1
            x = np.bincount(self._regions, minlength=model.K + 1)[1:]
            self._members = {k: np.flatnonzero(self._regions == k) for k in range(1, model.K + 1)}
            self._weights = region_graph_weights(model, x.tolist())
            by_size = [0] * (model.mu + 1)
            for S, v in self._weights.items():
                by_size[len(S)] += v
        else:
            raise TypeError(f"unsupported model {model!r}")
        by_size = list(by_size) + [0] * (model.mu + 1 - len(by_size))
        self.count = SubsetCount(total=sum(by_size), by_size=tuple(by_size))

    @property
    def total(self) -> int:
        return self.count.total

    def decode(self, u: int) -> list[int]:
        """Positions (into ``y``) of the ``u``-th admissible subset, ``0 <= u < total``."""
        if not 0 <= u < self.total:
            raise IndexError(u)
        if isinstance(self.model, PairwiseDistance):
            for s, ns in enumerate(self.count.by_size):
                if u < ns:
                    return [] if s == 0 else self._tables.decode(s, u)
                u -= ns
            raise AssertionError("unreachable")
        for S, v in self._weights.items():
            if u < v:
                picks = []
                for k in sorted(S):
                    members = self._members[k]
                    u, i = divmod(u, len(members))
                    picks.append(int(members[i]))
                return sorted(picks)
            u -= v
        raise AssertionError("unreachable")

    def sample(self, rng: np.random.Generator) -> RemovalOutcome:
        if self.total == 1:
            return RemovalOutcome.none()
        return RemovalOutcome.from_indices(self.y, self.decode(randbelow(rng, self.total)))

    def containing_counts(self) -> list[int]:
        """Number of admissible subsets containing each particle (sorted order)."""
        n = len(self.y)
        if isinstance(self.model, RegionGraph):
            out = []
            for k in self._regions.tolist():
                xk = len(self._members[k])
                out.append(sum(v for S, v in self._weights.items() if k in S) // xk)
            return out
        return [
            self.total - AdmissibleSubsets(self.model, self.y.without(i)).total
            for i in range(n)
        ]


def count_admissible_subsets(model, y: Configuration) -> SubsetCount:
    return AdmissibleSubsets(model, y).count


def sample_admissible_subset(model, y: Configuration, rng: np.random.Generator) -> RemovalOutcome:
    return AdmissibleSubsets(model, y).sample(rng)


@dataclass(frozen=True)
class Marginals:
    particle: dict[int, Fraction]
    region: dict[int, Fraction]


def _regions_for(model, y: Configuration, p: Partition | None) -> list[int]:
    if p is None:
        p = model.partition()
    return p.region_indices(y.ticks).tolist()


def removal_marginals(model, y: Configuration, p: Partition | None = None) -> Marginals:
    """Exact inclusion probability of every particle and every region."""
    subsets = AdmissibleSubsets(model, y)
    total = subsets.total
    counts = subsets.containing_counts()
    regions = _regions_for(model, y, p)
    K = (p or model.partition()).K
    particle = {int(i): Fraction(c, total) for i, c in zip(y.ids.tolist(), counts)}
    region = {k: Fraction(0) for k in range(1, K + 1)}
    for k, c in zip(regions, counts):
        region[k] += Fraction(c, total)
    return Marginals(particle, region)


def region_graph_weights(model: RegionGraph, x: Sequence[int]) -> dict[frozenset[int], int]:
    """``v_S = prod_{k in S} x_k`` over independent ``S`` (empty set included)."""
    out = {}
    for S in model.independent_sets:
        v = 1
        for k in S:
            v *= int(x[k - 1])
        if v:
            out[S] = v
    return out


def _pairwise_ok(model, y: Configuration) -> np.ndarray:
    n = len(y)
    ok = np.zeros((n, n), dtype=bool)
    for i, j in itertools.combinations(range(n), 2):
        ok[i, j] = ok[j, i] = model.admissible(y.subset([i, j]))
    return ok


def brute_force_enumerate(model, y: Configuration, *, exhaustive: bool = False) -> list[tuple[int, ...]]:
    """Every admissible subset of ``y`` as a sorted tuple of particle ids.

    By default candidates are grown only through pairwise-compatible particles
    (complete for monotone models) and each candidate is checked with the
    model's own predicate.  ``exhaustive=True`` tests all ``2**n`` subsets.
    """
    n = len(y)
    if n > BRUTE_FORCE_LIMIT:
        raise SizeLimitError(f"brute force is limited to {BRUTE_FORCE_LIMIT} particles, got {n}")
    ids = y.ids.tolist()
    found: list[tuple[int, ...]] = []
    if exhaustive:
        for mask in range(1 << n):
            idx = [i for i in range(n) if mask >> i & 1]
            if model.admissible(y.subset(idx)):
                found.append(tuple(sorted(ids[i] for i in idx)))
    else:
        ok = _pairwise_ok(model, y)

        def grow(chosen: list[int], start: int):
            if model.admissible(y.subset(chosen)):
                found.append(tuple(sorted(ids[i] for i in chosen)))
            for j in range(start, n):
                if all(ok[i, j] for i in chosen):
                    grow(chosen + [j], j + 1)

        grow([], 0)
    return sorted(found, key=lambda s: (len(s), s))


def q_S_exact(model, y: Configuration, p: Partition | None = None) -> dict[frozenset[int], Fraction]:
    """Probability that the removed set occupies exactly the regions ``S``."""
    if isinstance(model, RegionGraph):
        x = np.bincount((y.ticks * model.K >> 53) + 1, minlength=model.K + 1)[1:]
        weights = region_graph_weights(model, x.tolist())
    else:
        if p is None:
            p = model.partition()
        region = dict(zip(y.ids.tolist(), p.region_indices(y.ticks).tolist()))
        weights = Counter(
            frozenset(region[i] for i in subset) for subset in brute_force_enumerate(model, y)
        )
    total = sum(weights.values())
    return {S: Fraction(v, total) for S, v in weights.items()}


def compatible_counts(ticks: np.ndarray, at: np.ndarray, r_ticks: int) -> np.ndarray:
    """For each grid point in ``at``: how many of the sorted ``ticks`` lie at
    circular distance >= r from it (a particle at the point itself never does)."""
    at = np.asarray(at, dtype=np.int64)
    # ticks with offset in [r, 1 - r] from the point: rank(hi) - rank(lo - 1)
    # where rank(x) counts ticks <= x on the unrolled circle
    ends = np.concatenate((at + (SCALE - r_ticks), at + (r_ticks - 1)))
    laps, rem = np.divmod(ends, SCALE)
    rank = laps * len(ticks) + np.searchsorted(ticks, rem, side="right")
    return rank[: len(at)] - rank[len(at) :]


class PairSampler:
    """Uniform admissible subsets when at most two particles fit together.

    The number of compatible pairs is carried from slot to slot and updated
    from the particles that arrived and left, so a draw costs ``O(log n)``
    plus a short rejection loop instead of a full recount.  Pairs are drawn
    by proposing uniform ordered pairs of distinct particles and keeping the
    first compatible one, which is uniform over compatible pairs.  Whenever
    the new configuration is not the previous result plus newer particles,
    the count is rebuilt from scratch, so the law never depends on the cache.
    """

    MIN_ACCEPT = 1e-3

    def __init__(self, model: PairwiseDistance):
        if model.mu > 2:
            raise ValueError("PairSampler needs mu <= 2")
        self.model = model
        self._post: Configuration | None = None
        self._pairs = 0

    def pair_count(self, y: Configuration) -> int:
        """Compatible pairs in ``y`` (updates the carried state)."""
        R = self.model.r_ticks
        prev = self._post
        if prev is None:
            new = None
        elif y is prev:
            return self._pairs
        elif y.parent is prev:
            new = y.added
        else:
            new = self._appended(prev, y)
        if new is not None:
            deg = int(compatible_counts(y.ticks, new, R).sum())
            d = np.abs(new[:, None] - new[None, :])
            inner = int(np.count_nonzero((d >= R) & (d <= SCALE - R))) // 2
            return self._pairs + deg - inner
        return int(compatible_counts(y.ticks, y.ticks, R).sum()) // 2

    @staticmethod
    def _appended(prev: Configuration, y: Configuration) -> np.ndarray | None:
        """Ticks of particles in ``y`` newer than all of ``prev``, if ``y`` is
        exactly ``prev`` plus those particles; otherwise None."""
        top = int(prev.ids.max()) if len(prev) else -1
        fresh = y.ids > top
        keep = ~fresh
        if np.array_equal(y.ticks[keep], prev.ticks) and np.array_equal(y.ids[keep], prev.ids):
            return y.ticks[fresh]
        return None

    def __call__(self, y: Configuration, rng: np.random.Generator) -> RemovalOutcome:
        n = len(y)
        pairs = self.pair_count(y) if self.model.mu == 2 else 0
        u = randbelow(rng, 1 + n + pairs)
        if u == 0:
            picks: list[int] = []
        elif u <= n:
            picks = [u - 1]
        else:
            picks = self._draw_pair(y, pairs, rng)
        if picks:
            lost = int(compatible_counts(y.ticks, y.ticks[picks], self.model.r_ticks).sum())
            self._pairs = pairs - lost + (len(picks) == 2)
            self._post = y.without(picks)
        else:
            self._pairs = pairs
            self._post = y
        return RemovalOutcome.from_indices(y, picks, self._post)

    def _draw_pair(self, y: Configuration, pairs: int, rng: np.random.Generator) -> list[int]:
        n = len(y)
        accept = pairs / (n * (n - 1) / 2)
        if accept < self.MIN_ACCEPT:
            tables = _CircleTables(y.ticks, self.model.r_ticks, 2)
            return sorted(tables.decode(2, randbelow(rng, pairs)))
        R = self.model.r_ticks
        batch = int(min(4096, max(16, 2.0 / accept)))
        t = y.ticks
        while True:
            i = rng.integers(0, n, size=batch)
            j = rng.integers(0, n - 1, size=batch)
            j += j >= i
            d = np.abs(t[i] - t[j])
            hit = np.flatnonzero((d >= R) & (d <= SCALE - R))
            if len(hit):
                k = hit[0]
                return sorted((int(i[k]), int(j[k])))
