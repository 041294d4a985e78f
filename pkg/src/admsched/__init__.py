"""Random admissible-set scheduling of particles on the unit circle."""
from __future__ import annotations

from .admissibility import Configuration, PairwiseDistance, RegionGraph, is_admissible, max_admissible_size
from .diagnostics import (
    J_value,
    drift_G,
    empirical_drift,
    lemma2_check,
    lemma4_check,
    lemma_constants,
    lyapunov_V,
    region_counts,
    stability_detectors,
    w_value,
)
from .dynamics import RunResult, TraceRecord, run, simulate, step
from .experiment import ExperimentConfig, SweepConfig, cmd_run, cmd_sweep, load_config, load_sweep
from .geometry import Partition, build_partition, circ_distance, region_of, validate_partition
from .sampler import (
    AdmissibleSubsets,
    brute_force_enumerate,
    count_admissible_subsets,
    q_S_exact,
    removal_marginals,
    sample_admissible_subset,
)
from .scheduling import PriorityScheduler, RandomScheduler, priority_maximal_step, random_admissible_step
from .traffic import ArrivalSpec, sample_arrivals

__all__ = [name for name in dir() if not name.startswith("_") and name != "annotations"]
