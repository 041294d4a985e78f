"""Slot recursion: arrivals join, then the scheduler removes a set."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .admissibility import Configuration
from .traffic import ArrivalSpec, sample_arrivals


@dataclass(frozen=True)
class TraceRecord:
    t: int
    total_after: int
    arrived: int
    removed: int
    is_empty: bool
    V: float | None = None
    J: float | None = None
    logw: float | None = None


@dataclass
class RunResult:
    trace: list[TraceRecord]
    final_configuration: Configuration
    empty_visits: int
    seed: int
    slots: int = 0
    thinning: int = 1

    def __eq__(self, other) -> bool:
        if not isinstance(other, RunResult):
            return NotImplemented
        return (
            self.trace == other.trace
            and self.final_configuration == other.final_configuration
            and self.empty_visits == other.empty_visits
            and self.seed == other.seed
            and self.slots == other.slots
            and self.thinning == other.thinning
        )


def step(
    state: Configuration,
    t: int,
    traffic: ArrivalSpec,
    scheduler,
    model,
    rng: np.random.Generator,
    sched_rng: np.random.Generator | None = None,
    next_id: int | None = None,
) -> tuple[Configuration, TraceRecord]:
    """One slot: ``Y(t-) = Y(t-1) + A(t-1)``, then ``Y(t) = Y(t-) - R(t)``.

    ``rng`` drives arrivals and ``sched_rng`` (default: ``rng``) the scheduler.
    """
    if next_id is None:
        next_id = int(state.ids.max()) + 1 if len(state) else 0
    arrivals = sample_arrivals(traffic, rng)
    new_ticks = arrivals.particle_ticks()
    arrived = len(new_ticks)
    pre = state.inserted(new_ticks, np.arange(next_id, next_id + arrived, dtype=np.int64))
    outcome = scheduler(model, pre, sched_rng if sched_rng is not None else rng)
    if outcome.remaining is not None:
        post = outcome.remaining
    else:
        post = pre.without(list(outcome.indices)) if outcome.indices else pre
    total = len(post)
    return post, TraceRecord(t, total, arrived, outcome.removed_count, total == 0)


def simulate(
    model,
    traffic: ArrivalSpec,
    scheduler,
    slots: int,
    arrival_rng: np.random.Generator,
    sched_rng: np.random.Generator,
    *,
    thinning: int = 1,
    initial: Configuration | None = None,
    observe=None,
    on_slot=None,
) -> tuple[list[TraceRecord], Configuration, int]:
    """Iterate :func:`step`.  Every ``thinning``-th slot and every empty slot is
    recorded; ``observe(y)`` may return ``(V, J, logw)`` for recorded slots and
    ``on_slot(record)`` sees every slot."""
    if thinning < 1:
        raise ValueError("thinning must be >= 1")
    y = initial if initial is not None else Configuration.empty()
    next_id = int(y.ids.max()) + 1 if len(y) else 0
    trace: list[TraceRecord] = []
    empty_visits = 0
    for t in range(1, slots + 1):
        y, rec = step(y, t, traffic, scheduler, model, arrival_rng, sched_rng, next_id)
        next_id += rec.arrived
        if rec.is_empty:
            empty_visits += 1
        if on_slot is not None:
            on_slot(rec)
        if rec.is_empty or t % thinning == 0:
            if observe is not None:
                V, J, logw = observe(y)
                rec = TraceRecord(rec.t, rec.total_after, rec.arrived, rec.removed, rec.is_empty, V, J, logw)
            trace.append(rec)
    return trace, y, empty_visits


def run(config) -> RunResult:
    """Run an experiment described by an :class:`~admsched.experiment.ExperimentConfig`."""
    from .experiment import build_run  # local import: experiment depends on this module

    return build_run(config)
