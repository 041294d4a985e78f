"""Self-checks that pit the fast routines against independent slow ones.

Each check returns a :class:`CheckOutcome`; :func:`run_battery` collects them.
The counting routine under test is injectable so that a deliberately broken
variant can be shown to be caught.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy import stats

from .admissibility import Configuration, PairwiseDistance, RegionGraph
from .diagnostics import (
    drift_decomposition,
    exact_drift,
    lemma2_check,
    lemma4_check,
    lemma_constants,
    region_arrival_law,
    region_counts,
    region_marginals,
)
from .geometry import build_partition, snap, validate_partition
from .sampler import AdmissibleSubsets, brute_force_enumerate, removal_marginals
from .traffic import ArrivalSpec, Categorical

ORACLE_RADII = (0.2, 0.33, 0.49, 0.5)


@dataclass(frozen=True)
class CheckOutcome:
    name: str
    passed: bool
    instances: int
    detail: str = ""


def dp_counts(model, y: Configuration) -> tuple[int, list[int]]:
    """Total and per-particle containing counts from the fast sampler."""
    subsets = AdmissibleSubsets(model, y)
    return subsets.total, subsets.containing_counts()


def random_configuration(rng: np.random.Generator, n: int, tie_prob: float = 0.2) -> Configuration:
    """Uniform locations; some are copied or moved to exact antipodes/ties to
    exercise boundary cases."""
    locs = rng.random(n).tolist()
    for i in range(1, n):
        if rng.random() < tie_prob:
            j = int(rng.integers(i))
            locs[i] = [locs[j], (locs[j] + 0.5) % 1.0][int(rng.integers(2))]
    return Configuration.from_locations(locs)


def check_counting(
    n_max: int,
    trials: int,
    rng: np.random.Generator,
    counter: Callable = dp_counts,
    radii=ORACLE_RADII,
) -> CheckOutcome:
    bad = 0
    first = ""
    done = 0
    if n_max <= 0:
        return CheckOutcome("counting_equivalence", True, 0, "0 instances")
    for _ in range(trials):
        r = float(radii[int(rng.integers(len(radii)))])
        n = int(rng.integers(0, n_max + 1))
        model = PairwiseDistance(r)
        y = random_configuration(rng, n)
        found = brute_force_enumerate(model, y)
        per = Counter(i for s in found for i in s)
        total, contain = counter(model, y)
        ids = y.ids.tolist()
        ok = total == len(found) and all(c == per[i] for i, c in zip(ids, contain))
        done += 1
        if not ok:
            bad += 1
            first = first or f"r={r} n={n}: dp={total} brute={len(found)}"
    return CheckOutcome("counting_equivalence", bad == 0, done, first or f"{done} instances agree")


def chi_square_uniformity(model, y: Configuration, draws: int, rng: np.random.Generator):
    """Chi-square statistic and p-value of ``draws`` samples against the uniform
    law on the enumerated admissible subsets."""
    found = brute_force_enumerate(model, y)
    index = {s: i for i, s in enumerate(found)}
    subsets = AdmissibleSubsets(model, y)
    ids = y.ids
    counts = np.zeros(len(found), dtype=np.int64)
    for _ in range(draws):
        out = subsets.sample(rng)
        counts[index[tuple(sorted(ids[list(out.indices)].tolist()))]] += 1
    res = stats.chisquare(counts)
    return float(res.statistic), float(res.pvalue), len(found)


def uniformity_instance() -> tuple[PairwiseDistance, Configuration]:
    locs = [0.0, 0.07, 0.21, 0.36, 0.5, 0.58, 0.74, 0.9]
    return PairwiseDistance(0.3), Configuration.from_locations(locs)


def check_uniformity(draws: int, rng: np.random.Generator, alpha: float = 1e-3) -> CheckOutcome:
    if draws <= 0:
        return CheckOutcome("sampler_uniformity", True, 0, "0 instances")
    model, y = uniformity_instance()
    stat, pval, m = chi_square_uniformity(model, y, draws, rng)
    return CheckOutcome("sampler_uniformity", pval >= alpha, 1, f"{m} subsets, chi2={stat:.1f}, p={pval:.3g}")


def region_set_counts(model, y: Configuration, p) -> Counter:
    """``v_S``: admissible subsets of ``y`` grouped by the regions they occupy."""
    region = dict(zip(y.ids.tolist(), p.region_indices(y.ticks).tolist()))
    return Counter(frozenset(region[i] for i in s) for s in brute_force_enumerate(model, y))


def check_q_identities(n_max: int, trials: int, rng: np.random.Generator) -> CheckOutcome:
    """On circle instances: ``sum_{S contains k} q_S = p_k`` exactly; ``v_S <= w_S``
    for every occupied ``S``, with equality on guaranteed ones."""
    if n_max <= 0:
        return CheckOutcome("q_S_identities", True, 0, "0 instances")
    bad = []
    parts = {r: build_partition(r) for r in ORACLE_RADII}
    for _ in range(trials):
        r = float(ORACLE_RADII[int(rng.integers(len(ORACLE_RADII)))])
        model, p = PairwiseDistance(r), parts[r]
        y = random_configuration(rng, int(rng.integers(0, n_max + 1)))
        v = region_set_counts(model, y, p)
        total = sum(v.values())
        x = region_counts(y, p).tolist()
        marg = removal_marginals(model, y, p).region
        for k in range(1, p.K + 1):
            if sum(Fraction(c, total) for S, c in v.items() if k in S) != marg[k]:
                bad.append(f"p_k mismatch r={r} k={k}")
        occupied = [k for k in range(1, p.K + 1) if x[k - 1]]
        for size in range(0, model.mu + 2):
            for S in itertools.combinations(occupied, size):
                S = frozenset(S)
                w = math.prod(x[k - 1] for k in S)
                if v.get(S, 0) > w:
                    bad.append(f"v_S > w_S r={r} S={sorted(S)}")
                if model.guaranteed(p, S) and v.get(S, 0) != w:
                    bad.append(f"v_S != w_S on guaranteed r={r} S={sorted(S)}")
    return CheckOutcome("q_S_identities", not bad, trials, bad[0] if bad else "")


def random_region_graph(rng: np.random.Generator, tries: int = 100) -> RegionGraph:
    """A conflict graph whose consecutive blocks are independent and whose
    independence number equals the block length."""
    for _ in range(tries):
        mu = int(rng.integers(1, 4))
        K = mu * int(rng.integers(1, 4))
        pairs = [
            (a, b)
            for a, b in itertools.combinations(range(1, K + 1), 2)
            if (a - 1) // mu != (b - 1) // mu
        ]
        edges = [e for e in pairs if rng.random() < 0.5]
        try:
            return RegionGraph(K, frozenset(edges))
        except ValueError:
            continue
    return RegionGraph(2)


def large_state(rng: np.random.Generator, K: int, log_target: float) -> list[int]:
    """Counts with magnitudes around ``exp(log_target)``, some regions empty."""
    out = []
    for _ in range(K):
        if rng.random() < 0.2:
            out.append(int(rng.integers(0, 3)))
        else:
            e = log_target * rng.uniform(0.3, 1.5)
            out.append(int(math.exp(min(e, 700.0))) + int(rng.integers(0, 1000)))
    return out


def lemma_states(rng: np.random.Generator, count: int, load_fraction: float = 0.8, max_tries: int = 100_000):
    """``count`` triples ``(model, x, load)`` with ``w`` above the threshold."""
    found = []
    for _ in range(max_tries):
        if len(found) == count:
            break
        model = random_region_graph(rng)
        load = load_fraction * model.mu * rng.uniform(0.2, 1.0)
        c = lemma_constants(load, model.mu, 2 ** model.K)
        x = large_state(rng, model.K, c.log_B)
        res = lemma2_check(model, x, c.eps)
        if res.in_B:
            found.append((model, x, load))
    return found


def check_lemma2(states) -> CheckOutcome:
    bad = 0
    for model, x, load in states:
        eps = lemma_constants(load, model.mu, 2 ** model.K).eps
        res = lemma2_check(model, x, eps)
        bad += not res.holds
    return CheckOutcome("lemma2_inequality", bad == 0, len(states), f"{bad} violations")


def check_lemma4(states) -> CheckOutcome:
    bad = 0
    for model, x, load in states:
        res = lemma4_check(model, x, load)
        bad += not (res.in_B and res.holds)
    return CheckOutcome("lemma4_inequality", bad == 0, len(states), f"{bad} violations")


DRIFT_SPEC = ArrivalSpec(Categorical((0, 1, 2), (0.3, 0.5, 0.2)), Categorical((1, 2), (0.7, 0.3)))


def tiny_drift_instance(rng: np.random.Generator, n: int):
    """A few particles under a model with at most six regions."""
    if rng.random() < 0.5:
        model = PairwiseDistance(0.5)
    else:
        model = random_region_graph(rng)
    return model, random_configuration(rng, n), DRIFT_SPEC


def check_drift_identity(trials: int, rng: np.random.Generator) -> CheckOutcome:
    """Exact enumerated drift against ``G + G2`` from the per-region formula."""
    worst = 0.0
    for _ in range(trials):
        model, y, spec = tiny_drift_instance(rng, int(rng.integers(0, 7)))
        p = model.partition()
        full = exact_drift(model, y, spec, p)
        dec = drift_decomposition(region_counts(y, p), region_marginals(model, y, p), region_arrival_law(spec, p.K))
        worst = max(worst, abs(full - (dec.G + dec.G2)), abs(full - dec.delta_V))
    return CheckOutcome("drift_identity", worst < 1e-9, trials, f"max abs error {worst:.2e}")


def check_partitions(radii=(0.3, 0.49, 0.5)) -> CheckOutcome:
    bad = []
    for r in radii:
        model = PairwiseDistance(r)
        rep = validate_partition(build_partition(r), model)
        if not rep.passed:
            bad.append(f"r={r}: {[c.name for c in rep.failures()]}")
    return CheckOutcome("partition_validation", not bad, len(radii), "; ".join(bad))


def run_battery(
    n_max: int = 12,
    trials: int = 200,
    seed: int = 0,
    counter: Callable = dp_counts,
    draws: int = 20_000,
) -> list[CheckOutcome]:
    from .rng import stream

    rng = stream(seed, "oracle")
    states = lemma_states(rng, min(trials, 100)) if trials > 0 else []
    return [
        check_counting(n_max, trials, rng, counter),
        check_uniformity(draws if trials > 0 else 0, rng),
        check_q_identities(min(n_max, 10), min(trials, 50), rng),
        check_lemma2(states),
        check_lemma4(states),
        check_drift_identity(min(trials, 20), rng),
        check_partitions(),
    ]
