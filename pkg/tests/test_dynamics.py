from __future__ import annotations

import numpy as np

from admsched.admissibility import Configuration, PairwiseDistance
from admsched.dynamics import simulate, step
from admsched.experiment import ExperimentConfig
from admsched.dynamics import run
from admsched.rng import stream
from admsched.scheduling import PriorityScheduler, RandomScheduler
from admsched.traffic import ArrivalSpec, Categorical, Deterministic, Poisson

R49 = PairwiseDistance(0.49)
NO_ARRIVALS = ArrivalSpec.idle()


def test_empty_step_without_arrivals():
    y, rec = step(Configuration.empty(), 1, NO_ARRIVALS, RandomScheduler(), R49, np.random.default_rng(0))
    assert len(y) == 0
    assert (rec.total_after, rec.arrived, rec.removed, rec.is_empty) == (0, 0, 0, True)


def test_single_arrival_removed_half_the_time():
    spec = ArrivalSpec(Deterministic(1))
    rng = np.random.default_rng(3)
    left = [len(step(Configuration.empty(), 1, spec, RandomScheduler(), R49, rng)[0]) for _ in range(20_000)]
    assert set(left) <= {0, 1}
    assert abs(np.mean(left) - 0.5) < 4 * np.sqrt(0.25 / 20_000)


def test_conservation_and_nonnegativity():
    spec = ArrivalSpec(Poisson(1.5), Categorical((0, 1, 2), (0.2, 0.5, 0.3)))
    for scheduler in (RandomScheduler(), PriorityScheduler(0.5)):
        trace, y, _ = simulate(R49, spec, scheduler, 3000, stream(1, "arrivals"), stream(1, "scheduler"))
        prev = 0
        for rec in trace:
            assert rec.total_after == prev + rec.arrived - rec.removed >= 0
            assert rec.removed <= prev + rec.arrived
            prev = rec.total_after
        assert prev == len(y)


def test_thinning_keeps_empty_slots():
    trace, _, empty = simulate(
        R49, ArrivalSpec.poisson_unit(0.5), RandomScheduler(), 5000,
        stream(2, "arrivals"), stream(2, "scheduler"), thinning=50,
    )
    assert empty > 0
    assert sum(r.is_empty for r in trace) == empty
    assert all(r.t % 50 == 0 or r.is_empty for r in trace)
    assert [r.t for r in trace if r.t % 50 == 0] == list(range(50, 5001, 50))


def test_run_zero_slots():
    cfg = ExperimentConfig(r=0.49, arrivals=ArrivalSpec.poisson_unit(1.0), slots=0)
    res = run(cfg)
    assert res.trace == [] and len(res.final_configuration) == 0 and res.empty_visits == 0


def test_run_is_deterministic():
    cfg = ExperimentConfig(r=0.49, arrivals=ArrivalSpec.poisson_unit(1.9), slots=3000, seed=42, thinning=7)
    assert run(cfg) == run(cfg)


def test_scheduler_choice_does_not_change_arrivals():
    base = dict(r=0.49, arrivals=ArrivalSpec.poisson_unit(1.9), slots=2000, seed=5, thinning=1)
    a = run(ExperimentConfig(**base))
    b = run(ExperimentConfig(**base, scheduler="priority", zeta=0.5))
    assert [r.arrived for r in a.trace] == [r.arrived for r in b.trace]


def test_light_load_returns_to_empty():
    cfg = ExperimentConfig(r=0.49, arrivals=ArrivalSpec.poisson_unit(1.0), slots=100_000, seed=1, thinning=1000)
    assert run(cfg).empty_visits > 0


def test_initial_configuration_used():
    cfg = ExperimentConfig(
        r=0.49, arrivals=NO_ARRIVALS, slots=1, thinning=1, initial=(0.1, 0.2), scheduler="priority", zeta=0.0
    )
    res = run(cfg)
    assert res.trace[-1].removed == 1 and len(res.final_configuration) == 1
