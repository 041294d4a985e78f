"""The two service disciplines: random admissible set vs. priority greedy."""
from __future__ import annotations

import numpy as np

from .admissibility import Configuration, PairwiseDistance
from .geometry import SCALE, to_ticks
from .sampler import PairSampler, RemovalOutcome, sample_admissible_subset


def random_admissible_step(model, y: Configuration, rng: np.random.Generator) -> RemovalOutcome:
    return sample_admissible_subset(model, y, rng)


def priority_maximal_step(model, y: Configuration, zeta: float) -> RemovalOutcome:
    """Greedy maximal set, scanning anticlockwise (increasing coordinate) from ``zeta``.

    Each step takes the first particle at distance >= r from the previous pick;
    the scan stops once that particle would come back within r of the first
    pick, or when ``mu`` particles are taken.
    """
    if not isinstance(model, PairwiseDistance):
        raise TypeError("priority scheduling is defined for the PairwiseDistance model only")
    n = len(y)
    if n == 0:
        return RemovalOutcome.none()
    ticks = y.ticks
    z = to_ticks(zeta)
    R = model.r_ticks

    def first_at_or_after(offset: int) -> int | None:
        # position of the first particle with (tick - z) mod 1 >= offset
        target = z + offset
        if target < SCALE:
            pos = int(np.searchsorted(ticks, target, side="left"))
            if pos < n:
                return pos
            target = SCALE
        pos = int(np.searchsorted(ticks, target - SCALE, side="left"))
        if pos < n and ticks[pos] < z:
            return pos
        return None

    first = first_at_or_after(0)
    first_off = (int(ticks[first]) - z) % SCALE
    picks = [first]
    last_off = first_off
    while len(picks) < model.mu:
        want = last_off + R
        if want >= SCALE:
            break
        pos = first_at_or_after(want)
        if pos is None:
            break
        off = (int(ticks[pos]) - z) % SCALE
        if SCALE - (off - first_off) < R:
            break
        picks.append(pos)
        last_off = off
    return RemovalOutcome.from_indices(y, picks)


class RandomScheduler:
    """Uniform admissible subset each slot.

    For protocol models with ``mu <= 2`` the draw goes through a
    :class:`PairSampler` that carries the pair count across slots; otherwise
    the full counting sampler runs on every call.  Both give the same law.
    """

    name = "random"

    def __init__(self):
        self._fast: dict[PairwiseDistance, PairSampler] = {}

    def __call__(self, model, y: Configuration, rng: np.random.Generator) -> RemovalOutcome:
        if isinstance(model, PairwiseDistance) and model.mu <= 2:
            fast = self._fast.get(model)
            if fast is None:
                fast = self._fast[model] = PairSampler(model)
            return fast(y, rng)
        return random_admissible_step(model, y, rng)


class PriorityScheduler:
    name = "priority"

    def __init__(self, zeta: float):
        self.zeta = zeta

    def __call__(self, model, y: Configuration, rng: np.random.Generator | None = None) -> RemovalOutcome:
        return priority_maximal_step(model, y, self.zeta)


def make_scheduler(kind: str, zeta: float | None = None):
    if kind == "random":
        return RandomScheduler()
    if kind == "priority":
        if zeta is None:
            raise ValueError("priority scheduling needs zeta")
        return PriorityScheduler(zeta)
    raise ValueError(f"unknown scheduler {kind!r}")
