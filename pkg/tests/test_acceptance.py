"""End-to-end acceptance criteria.  Each test prints one PASS/FAIL line.

The long-run runs (criteria 3, 4, 5, 10) take several minutes on one
core; deselect them with ``-m "not slow"``.
"""
from __future__ import annotations

import itertools
import math
import time
from collections import Counter
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from admsched.admissibility import Configuration, PairwiseDistance
from admsched.diagnostics import (
    STABLE_SLOPE,
    UNSTABLE_R2,
    UNSTABLE_SLOPE,
    bounded_tail_mean,
    drift_decomposition,
    exact_drift,
    fraction_in,
    g2_bound,
    ks_uniform,
    lemma2_check,
    lemma4_check,
    lemma_constants,
    region_arrival_law,
    region_counts,
    region_marginals,
    run_verdict,
    running_J_variation,
    stability_detectors,
)
from admsched.dynamics import run
from admsched.experiment import ExperimentConfig, load_sweep
from admsched.geometry import build_partition, forbidden_size, mu_for_radius, validate_partition
from admsched.oracles import (
    ORACLE_RADII,
    chi_square_uniformity,
    lemma_states,
    random_configuration,
    region_set_counts,
    tiny_drift_instance,
    uniformity_instance,
)
from admsched.rng import stream
from admsched.sampler import (
    brute_force_enumerate,
    count_admissible_subsets,
    q_S_exact,
    removal_marginals,
)
from admsched.traffic import ArrivalSpec

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
FIG_SEEDS = (1, 2, 3, 4, 5)
FIG_SLOTS = 200_000


def report(capsys, number: int, passed: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\nCRITERION {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


# 1 ---------------------------------------------------------------------------


def test_criterion_1_oracle_equivalence(capsys):
    rng = stream(2024, "oracle")
    start = time.perf_counter()
    instances, bad, largest = 0, [], 0
    for trial in range(240):
        r = ORACLE_RADII[trial % len(ORACLE_RADII)]
        n = 14 if trial % 8 == 0 else int(rng.integers(0, 15))
        model = PairwiseDistance(r)
        y = random_configuration(rng, n)
        found = brute_force_enumerate(model, y)
        per = Counter(i for s in found for i in s)
        total = count_admissible_subsets(model, y).total
        marg = removal_marginals(model, y).particle
        instances += 1
        largest = max(largest, n)
        if total != len(found):
            bad.append(f"r={r} n={n}: count {total} vs {len(found)}")
        for i in y.ids.tolist():
            if marg[i] != Fraction(per[i], len(found)):
                bad.append(f"r={r} n={n}: marginal of {i}")
    elapsed = time.perf_counter() - start
    ok = not bad and instances >= 200 and elapsed < 60
    report(capsys, 1, ok, f"{instances} instances, n<={largest}, {len(bad)} mismatches, {elapsed:.1f}s")
    assert not bad, bad[:3]
    assert instances >= 200 and largest == 14
    assert elapsed < 60


# 2 ---------------------------------------------------------------------------


def test_criterion_2_sampler_uniformity(capsys):
    model, y = uniformity_instance()
    assert len(y) == 8 and model.r == 0.3
    start = time.perf_counter()
    stat, pval, m = chi_square_uniformity(model, y, 1_000_000, stream(7, "oracle"))
    elapsed = time.perf_counter() - start
    ok = pval >= 1e-3 and elapsed < 120
    report(capsys, 2, ok, f"{m} subsets, 10^6 draws, chi2={stat:.1f}, p={pval:.3g}, {elapsed:.1f}s")
    assert pval >= 1e-3
    assert elapsed < 120


# 3, 4, 10: shared long-run runs -----------------------------------------


def long_config(scheduler: str, seed: int) -> ExperimentConfig:
    return ExperimentConfig(
        r=0.49,
        arrivals=ArrivalSpec.poisson_unit(1.95),
        scheduler=scheduler,
        zeta=0.5 if scheduler == "priority" else None,
        slots=FIG_SLOTS,
        seed=seed,
        thinning=100,
        diagnostics=scheduler == "random",
    )


@pytest.fixture(scope="module")
def long_runs():
    start = time.perf_counter()
    runs = {(kind, seed): run(long_config(kind, seed)) for kind in ("random", "priority") for seed in FIG_SEEDS}
    return runs, time.perf_counter() - start


@pytest.mark.slow
def test_criterion_3_trajectories(capsys, long_runs):
    runs, elapsed = long_runs
    rnd = [runs["random", s] for s in FIG_SEEDS]
    pri = [runs["priority", s] for s in FIG_SEEDS]
    rnd_reps = [stability_detectors(res.trace) for res in rnd]
    pri_reps = [stability_detectors(res.trace) for res in pri]
    rnd_slope = float(np.mean([rep.tail_slope for rep in rnd_reps]))
    settled = [res.empty_visits >= 1 or bounded_tail_mean(res.trace, 100) for res in rnd]
    pri_slope = float(np.mean([rep.tail_slope for rep in pri_reps]))
    pri_r2 = [rep.r_squared for rep in pri_reps]
    random_ok = abs(rnd_slope) <= STABLE_SLOPE and all(settled)
    priority_ok = pri_slope >= UNSTABLE_SLOPE and min(pri_r2) >= UNSTABLE_R2
    detail = (
        f"random mean slope {rnd_slope:.5f} (|.|<={STABLE_SLOPE}), per seed "
        f"{[round(rep.tail_slope, 5) for rep in rnd_reps]}, empty visits {[res.empty_visits for res in rnd]}, "
        f"settled {settled}; priority mean slope {pri_slope:.4f} (>={UNSTABLE_SLOPE}), "
        f"min R^2 {min(pri_r2):.3f}; {elapsed:.0f}s"
    )
    report(capsys, 3, random_ok and priority_ok and elapsed < 600, detail)
    assert priority_ok
    assert random_ok
    assert elapsed < 600


@pytest.mark.slow
def test_criterion_4_terminal_layout(capsys, long_runs):
    runs, _ = long_runs
    ks = [ks_uniform(runs["random", s].final_configuration.locations) for s in FIG_SEEDS]
    frac = [fraction_in(runs["priority", s].final_configuration.locations, 0.45, 0.52) for s in FIG_SEEDS]
    ok = np.mean(ks) <= 0.1 and np.mean(frac) >= 0.5
    report(
        capsys,
        4,
        ok,
        f"random KS mean {np.mean(ks):.4f} (<=0.1) {[round(v, 4) for v in ks]}; "
        f"priority fraction in [0.45,0.52) mean {np.mean(frac):.3f} (>=0.5) {[round(v, 3) for v in frac]}",
    )
    assert np.mean(ks) <= 0.1
    assert np.mean(frac) >= 0.5


@pytest.mark.slow
def test_criterion_10_running_J(capsys, long_runs):
    runs, _ = long_runs
    var = [running_J_variation(runs["random", s].trace, 100) for s in FIG_SEEDS]
    ok = max(var) <= 0.1
    report(capsys, 10, ok, f"last-quarter relative variation of running J average {[round(v, 4) for v in var]} (<=0.1)")
    assert max(var) <= 0.1


# 5 ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_5_stability_boundary(capsys):
    sweep = load_sweep(CONFIGS / "sweep_boundary.json")
    assert sweep.lambda_grid == (1.6, 1.8, 2.2, 2.4) and sweep.seeds == (1, 2, 3)
    assert sweep.base.r == 0.49 and sweep.base.model().mu == 2 and sweep.base.slots == 100_000
    start = time.perf_counter()
    bad, lines = [], []
    for cfg in sweep.runs():
        res = run(cfg)
        v = run_verdict(res.trace, cfg.thinning)
        rep = stability_detectors(res.trace)
        lam = cfg.arrivals.lam
        want = v.stable if lam < 2 else v.unstable
        lines.append(f"{lam}/{cfg.seed}:{rep.tail_slope:+.4f}")
        if not want:
            bad.append((lam, cfg.seed))
    elapsed = time.perf_counter() - start
    report(capsys, 5, not bad and elapsed < 900, f"{len(lines)} runs, failing {bad}; slopes {' '.join(lines)}; {elapsed:.0f}s")
    assert not bad
    assert elapsed < 900


# 6 ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def lemma_state_set():
    states = lemma_states(stream(11, "oracle"), 100)
    assert len(states) == 100
    return states


def test_criterion_6_lemma2(capsys, lemma_state_set):
    worst = math.inf
    bad = 0
    for model, x, load in lemma_state_set:
        eps = lemma_constants(load, model.mu, 2**model.K).eps
        res = lemma2_check(model, x, eps)
        assert res.in_B
        bad += not res.holds
        worst = min(worst, res.lhs - res.rhs)
    # circle instances: q_S against v_S / sum v_T, and v_S <= w_S with equality on guaranteed sets
    rng = stream(12, "oracle")
    circle_bad = []
    for trial in range(120):
        r = ORACLE_RADII[trial % len(ORACLE_RADII)]
        model, p = PairwiseDistance(r), build_partition(r)
        y = random_configuration(rng, int(rng.integers(0, 11)))
        v = region_set_counts(model, y, p)
        total = sum(v.values())
        q = q_S_exact(model, y, p)
        if q != {S: Fraction(c, total) for S, c in v.items()}:
            circle_bad.append(f"q_S r={r}")
        marg = removal_marginals(model, y, p).region
        for k in range(1, p.K + 1):
            if sum(f for S, f in q.items() if k in S) != marg[k]:
                circle_bad.append(f"p_k r={r} k={k}")
        x = region_counts(y, p).tolist()
        occupied = [k for k in range(1, p.K + 1) if x[k - 1]]
        for size in range(model.mu + 2):
            for S in map(frozenset, itertools.combinations(occupied, size)):
                w = math.prod(x[k - 1] for k in S)
                if v.get(S, 0) > w or (model.guaranteed(p, S) and v.get(S, 0) != w):
                    circle_bad.append(f"v_S/w_S r={r} S={sorted(S)}")
    ok = bad == 0 and not circle_bad
    report(
        capsys,
        6,
        ok,
        f"100 RegionGraph states in B(eps): {bad} violations, min slack {worst:.3g}; "
        f"120 circle instances: {len(circle_bad)} identity failures",
    )
    assert bad == 0
    assert not circle_bad, circle_bad[:3]


# 7 ---------------------------------------------------------------------------


def test_criterion_7_lemma4(capsys, lemma_state_set):
    bad = 0
    slack = math.inf
    for model, x, load in lemma_state_set:
        assert load < model.mu
        res = lemma4_check(model, x, load)
        bad += not res.holds
        slack = min(slack, res.bound - res.G)
    report(capsys, 7, bad == 0, f"100 states: {bad} violations, min slack {slack:.3g}")
    assert bad == 0


# 8 ---------------------------------------------------------------------------


def test_criterion_8_lemma3(capsys):
    rng = stream(13, "oracle")
    worst_identity = 0.0
    lo, hi, outside = math.inf, -math.inf, 0
    for _ in range(20):
        model, y, spec = tiny_drift_instance(rng, int(rng.integers(1, 7)))
        p = model.partition()
        law = region_arrival_law(spec, p.K)
        dec = drift_decomposition(region_counts(y, p), region_marginals(model, y, p), law)
        full = exact_drift(model, y, spec, p)
        worst_identity = max(worst_identity, abs(full - (dec.G + dec.G2)))
        # scale the configuration up: every particle repeated c times in place
        for c in (1, 4, 16, 64, 256, 1024):
            big = Configuration(np.repeat(y.ticks, c))
            G2 = drift_decomposition(region_counts(big, p), region_marginals(model, big, p), law).G2
            lo, hi = min(lo, G2), max(hi, G2)
            outside += not (-p.K <= G2 <= g2_bound(law, p.K))
    ok = worst_identity < 1e-9 and outside == 0
    report(
        capsys,
        8,
        ok,
        f"max |dV - (G + G2)| = {worst_identity:.2e}; observed residual band [{lo:.4f}, {hi:.4f}] "
        f"across counts x1..x1024; {outside} values outside the per-instance bound [-K, g2_bound]",
    )
    assert worst_identity < 1e-9
    assert outside == 0


# 9 ---------------------------------------------------------------------------


def test_criterion_9_partitions(capsys):
    details = []
    for r in (0.3, 0.49, 0.5):
        model = PairwiseDistance(r)
        rep = validate_partition(build_partition(r), model)
        assert rep.passed, (r, [c.name for c in rep.failures()])
        details.append(f"r={r}: K={build_partition(r).K} mu={mu_for_radius(r)}")
    # integer 1/r: two antipodal particles are exactly r apart, yet not removable together
    assert forbidden_size(0.5) == 2 and mu_for_radius(0.5) == 1
    y = Configuration.from_locations([0.1, 0.6])
    assert brute_force_enumerate(PairwiseDistance(0.5), y) == [(), (0,), (1,)]
    assert forbidden_size(0.3) is None and forbidden_size(0.49) is None
    report(capsys, 9, True, "; ".join(details) + "; r=0.5 forbids size 2")
