"""Lyapunov observables on region counts and stability detectors.

All logarithms are natural.  Region counts may be numpy integer arrays or
plain sequences of (arbitrarily large) Python integers.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import stats

from .admissibility import Configuration, PairwiseDistance, RegionGraph
from .geometry import Partition
from .sampler import (
    AdmissibleSubsets,
    q_S_exact,
    region_graph_weights,
    removal_marginals,
)
from .traffic import ArrivalSpec, sample_arrivals

_LOG_MAX_FLOAT = math.log(np.finfo(float).max)


def region_counts(y: Configuration, p: Partition) -> np.ndarray:
    return np.bincount(p.region_indices(y.ticks), minlength=p.K + 1)[1:]


def _ints(x) -> list[int]:
    return [int(v) for v in (x.tolist() if isinstance(x, np.ndarray) else x)]


def lyapunov_V(x) -> float:
    """``sum x_k log x_k`` over occupied regions."""
    if isinstance(x, np.ndarray) and x.dtype != object:
        xs = x[x > 1].astype(float)
        return float(np.sum(xs * np.log(xs)))
    return math.fsum(k * math.log(k) for k in _ints(x) if k > 1)


def J_value(x) -> float:
    if isinstance(x, np.ndarray) and x.dtype != object:
        xs = x[x > 1].astype(float)
        return float(np.sum(np.log(xs)))
    return math.fsum(math.log(k) for k in _ints(x) if k > 1)


def drift_G(x, p_k: Sequence, ea: float) -> float:
    """``sum_{x_k >= 1} log x_k (E[A_k] - p_k)``; ``p_k`` is indexed like ``x``."""
    xs = _ints(x)
    if len(p_k) != len(xs):
        raise ValueError(f"dimension mismatch: {len(xs)} counts vs {len(p_k)} probabilities")
    return math.fsum(math.log(k) * (ea - float(pk)) for k, pk in zip(xs, p_k) if k > 1)


@functools.lru_cache(maxsize=32)
def _guaranteed_pairs(model, p: Partition) -> np.ndarray:
    K = p.K
    ok = np.zeros((K + 1, K + 1), dtype=bool)
    for i, j in itertools.combinations(range(1, K + 1), 2):
        ok[i, j] = ok[j, i] = model.guaranteed(p, frozenset((i, j)))
    return ok


def max_guaranteed_log_weight(x, p: Partition, model) -> tuple[float, frozenset[int]]:
    """``log w`` and a maximising set: the largest ``sum log x_k`` over
    guaranteed region sets (branch and bound over occupied regions; both
    shipped models decide guaranteed-ness pairwise plus a size cap)."""
    xs = _ints(x)
    weights = {k: math.log(v) for k, v in enumerate(xs, start=1) if v > 1}
    if not weights:
        return 0.0, frozenset()
    ok = _guaranteed_pairs(model, p)
    order = sorted(weights, key=lambda k: (-weights[k], k))
    cap = model.mu
    best = [0.0, ()]

    def extend(start: int, chosen: tuple[int, ...], total: float):
        if total > best[0]:
            best[0], best[1] = total, chosen
        room = cap - len(chosen)
        if room == 0:
            return
        for idx in range(start, len(order)):
            k = order[idx]
            if total + weights[k] * room <= best[0]:
                break
            if all(ok[k, c] for c in chosen):
                extend(idx + 1, chosen + (k,), total + weights[k])

    extend(0, (), 0.0)
    return best[0], frozenset(best[1])


def w_value(y: Configuration, p: Partition, model) -> tuple[float, frozenset[int]]:
    return max_guaranteed_log_weight(region_counts(y, p), p, model)


def block_log_weight(x, p: Partition) -> float:
    """Largest ``log w_S`` over the canonical blocks only (a lower bound on log w)."""
    xs = _ints(x)
    best = 0.0
    for block in p.distinct_blocks:
        best = max(best, math.fsum(math.log(xs[k - 1]) for k in block if xs[k - 1] > 1))
    return best


@dataclass(frozen=True)
class LemmaConstants:
    eps: float
    log_B: float
    B: float | None
    overflow: bool


def log_B_threshold(eps: float, omega_size: int) -> float:
    """``log((2 |Omega| / eps) ** (2 / eps))``."""
    return (2.0 / eps) * (math.log(2) + math.log(omega_size) - math.log(eps))


def lemma_constants(lambda_beta: float, mu: int, omega_size: int) -> LemmaConstants:
    if lambda_beta >= mu:
        raise ValueError(f"need lambda*beta < mu, got {lambda_beta} >= {mu}")
    eps = 0.5 * (1.0 - lambda_beta / mu)
    log_B = log_B_threshold(eps, omega_size)
    overflow = log_B > _LOG_MAX_FLOAT
    return LemmaConstants(eps, log_B, None if overflow else math.exp(log_B), overflow)


def _region_graph_q(model: RegionGraph, x) -> tuple[dict[frozenset[int], int], int]:
    weights = region_graph_weights(model, _ints(x))
    return weights, sum(weights.values())


def _log_w_S(xs: list[int], S) -> float:
    return math.fsum(math.log(xs[k - 1]) for k in S if xs[k - 1] > 1)


@dataclass(frozen=True)
class Lemma2Result:
    lhs: float
    rhs: float
    log_w: float
    log_threshold: float
    in_B: bool
    holds: bool


def lemma2_check(model, state, eps: float, p: Partition | None = None) -> Lemma2Result:
    """``sum_S q_S log w_S`` against ``(1 - eps) log w``.

    ``state`` is a vector of region counts for a :class:`RegionGraph` (closed
    form ``q_S``) or a small :class:`Configuration` for the protocol model
    (``q_S`` by enumeration).  The checked claim is ``in_B => holds``.
    """
    if isinstance(model, RegionGraph):
        p = p or model.partition()
        xs = _ints(state)
        weights, total = _region_graph_q(model, xs)
        lhs = math.fsum(v / total * _log_w_S(xs, S) for S, v in weights.items())
    elif isinstance(model, PairwiseDistance):
        if not isinstance(state, Configuration):
            raise TypeError("the protocol model needs a particle configuration")
        p = p or model.partition()
        xs = _ints(region_counts(state, p))
        q = q_S_exact(model, state, p)
        lhs = math.fsum(float(qs) * _log_w_S(xs, S) for S, qs in q.items())
    else:
        raise TypeError(f"unsupported model {model!r}")
    log_w, _ = max_guaranteed_log_weight(xs, p, model)
    rhs = (1.0 - eps) * log_w
    log_thr = log_B_threshold(eps, 2 ** p.K)
    slack = 1e-12 * max(1.0, abs(rhs))
    return Lemma2Result(lhs, rhs, log_w, log_thr, log_w >= log_thr, lhs >= rhs - slack)


def region_marginals(model, state, p: Partition | None = None) -> list[float]:
    """``p_k`` for ``k = 1..K`` (closed form for RegionGraph counts)."""
    if isinstance(model, RegionGraph) and not isinstance(state, Configuration):
        xs = _ints(state)
        weights, total = _region_graph_q(model, xs)
        out = [0] * model.K
        for S, v in weights.items():
            for k in S:
                out[k - 1] += v
        return [v / total for v in out]
    m = removal_marginals(model, state, p)
    return [float(m.region[k]) for k in sorted(m.region)]


@dataclass(frozen=True)
class Lemma4Result:
    G: float
    bound: float
    in_B: bool
    holds: bool


def lemma4_check(model: RegionGraph, x, lambda_beta: float) -> Lemma4Result:
    """``G(y) <= -eps mu sum_k (1/K) log x_k`` with ``eps = (1 - lambda beta / mu) / 2``."""
    p = model.partition()
    xs = _ints(x)
    consts = lemma_constants(lambda_beta, model.mu, 2 ** model.K)
    pk = region_marginals(model, xs)
    G = drift_G(xs, pk, lambda_beta / model.K)
    bound = -consts.eps * model.mu * math.fsum(math.log(v) / model.K for v in xs if v > 1)
    log_w, _ = max_guaranteed_log_weight(xs, p, model)
    slack = 1e-12 * max(1.0, abs(bound))
    return Lemma4Result(G, bound, log_w >= consts.log_B, G <= bound + slack)


# ---------------------------------------------------------------- drift

def _entropy_step(x: int, d: int) -> float:
    """``f(x + d) - f(x)`` for ``f(m) = m log m``, without cancellation."""
    m = x + d
    if m < 0:
        raise ValueError("negative count")
    if x == 0:
        return m * math.log(m) if m > 1 else 0.0
    if m == 0:
        return -x * math.log(x)
    return x * math.log1p(d / x) + d * math.log(m)


def _convolve(a: dict[int, float], b: dict[int, float]) -> dict[int, float]:
    out: dict[int, float] = {}
    for i, pa in a.items():
        for j, pb in b.items():
            out[i + j] = out.get(i + j, 0.0) + pa * pb
    return out


def region_arrival_law(spec: ArrivalSpec, K: int) -> dict[int, float]:
    """Exact law of the number of particles landing in one given region.

    Needs finite-support batch count and batch size laws.
    """
    counts = spec.batch_count.support()
    sizes = spec.batch_size.support()
    per_batch = {0: 1.0 - 1.0 / K}
    for s, q in sizes:
        per_batch[s] = per_batch.get(s, 0.0) + q / K
    law: dict[int, float] = {}
    power = {0: 1.0}
    n_max = max(c for c, _ in counts)
    probs = dict(counts)
    for n in range(n_max + 1):
        if n in probs:
            for a, q in power.items():
                law[a] = law.get(a, 0.0) + probs[n] * q
        power = _convolve(power, per_batch)
    return law


@dataclass(frozen=True)
class DriftDecomposition:
    delta_V: float
    G: float
    G2: float


def drift_decomposition(x, p_k: Sequence[float], law: dict[int, float]) -> DriftDecomposition:
    """One-step drift of V split into G and the bounded remainder G2.

    The step removes (region k losing one particle with probability ``p_k``)
    and then adds ``A_k ~ law`` in every region.  ``delta_V`` is computed
    directly per region; ``G2`` is the explicit remainder formula, so
    ``delta_V == G + G2`` is a genuine identity check.
    """
    xs = _ints(x)
    mean_a = math.fsum(a * q for a, q in law.items())
    dv, g, g2 = [], [], []
    for xk, pk in zip(xs, p_k):
        pk = float(pk)
        if xk == 0:
            dv.append(math.fsum(q * _entropy_step(0, a) for a, q in law.items()))
            g2.append(math.fsum(q * a * math.log(a) for a, q in law.items() if a >= 1))
            continue
        dv.append(
            math.fsum(
                q * (pk * _entropy_step(xk, a - 1) + (1 - pk) * _entropy_step(xk, a))
                for a, q in law.items()
            )
        )
        if xk == 1:
            g2.append(
                math.fsum(
                    q * (pk * (a * math.log(a) if a >= 1 else 0.0) + (1 - pk) * (1 + a) * math.log(1 + a))
                    for a, q in law.items()
                )
            )
            continue
        g.append(math.log(xk) * (mean_a - pk))
        g2.append(
            math.fsum(
                q
                * (
                    pk * (xk + a - 1) * math.log1p((a - 1) / xk)
                    + (1 - pk) * (xk + a) * math.log1p(a / xk)
                )
                for a, q in law.items()
            )
        )
    return DriftDecomposition(math.fsum(dv), math.fsum(g), math.fsum(g2))


def g2_bound(law: dict[int, float], K: int) -> float:
    """A bound on ``|G2|`` that holds in every state.

    Per region the remainder lies in ``[-1, c]`` with
    ``c = max(E[(1+A) log(1+A)], E[A] + (E[A^2] + 1) / 2)``: for ``x >= 2``
    write ``u = D / x >= -1/2``; then ``u <= (1+u) log(1+u) <= u + u^2``.
    """
    ea = math.fsum(a * q for a, q in law.items())
    ea2 = math.fsum(a * a * q for a, q in law.items())
    elog = math.fsum(q * (1 + a) * math.log(1 + a) for a, q in law.items())
    return K * max(1.0, elog, ea + (ea2 + 1) / 2)


def _removal_law(model, state, p: Partition) -> dict[frozenset[int], float]:
    if isinstance(model, RegionGraph) and not isinstance(state, Configuration):
        weights, total = _region_graph_q(model, _ints(state))
        return {S: v / total for S, v in weights.items()}
    return {S: float(q) for S, q in q_S_exact(model, state, p).items()}


def exact_drift(model, state, spec: ArrivalSpec, p: Partition | None = None, max_outcomes: int = 2_000_000) -> float:
    """Exact ``E[V(next)] - V(now)`` by enumerating every removal region-set and
    every arrival outcome (batch count, sizes, landing regions).

    ``state`` is region counts (RegionGraph) or a small configuration.
    """
    p = p or model.partition()
    xs = _ints(state) if not isinstance(state, Configuration) else _ints(region_counts(state, p))
    K = p.K
    removal = _removal_law(model, state, p)
    counts = spec.batch_count.support()
    sizes = spec.batch_size.support()
    n_out = sum(len(sizes) ** n * K ** n for n, _ in counts) * len(removal)
    if n_out > max_outcomes:
        raise ValueError(f"{n_out} outcomes exceed the enumeration limit {max_outcomes}")
    terms = []
    for S, qS in removal.items():
        for n, qn in counts:
            for size_combo in itertools.product(sizes, repeat=n):
                q_sizes = math.prod(q for _, q in size_combo)
                for regions in itertools.product(range(K), repeat=n):
                    d = [0] * K
                    for k in S:
                        d[k - 1] -= 1
                    for (s, _), k in zip(size_combo, regions):
                        d[k] += s
                    change = math.fsum(_entropy_step(xk, dk) for xk, dk in zip(xs, d) if dk)
                    terms.append(qS * qn * q_sizes * K ** -n * change)
    return math.fsum(terms)


@dataclass(frozen=True)
class DriftEstimate:
    mean: float
    stderr: float
    exact: float | None = None


def empirical_drift(
    y: Configuration,
    model,
    traffic: ArrivalSpec,
    p: Partition,
    rng: np.random.Generator,
    reps: int,
) -> DriftEstimate:
    """Monte Carlo one-step drift of V from ``y`` (removal from ``y``, then arrivals).

    For tiny instances (at most 6 particles, finite-support arrival laws) the
    exact value from :func:`exact_drift` is attached.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    x = region_counts(y, p)
    xs = _ints(x)
    subsets = AdmissibleSubsets(model, y)
    regions = p.region_indices(y.ticks)
    samples = np.empty(reps)
    for i in range(reps):
        d = np.zeros(p.K + 1, dtype=np.int64)
        out = subsets.sample(rng)
        if out.indices:
            np.subtract.at(d, regions[list(out.indices)], 1)
        arr = sample_arrivals(traffic, rng)
        if len(arr):
            np.add.at(d, p.region_indices(arr.ticks), arr.sizes)
        samples[i] = math.fsum(
            _entropy_step(xs[k - 1], int(d[k])) for k in np.flatnonzero(d[1:]) + 1
        )
    mean = float(samples.mean())
    stderr = float(samples.std(ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan")
    exact = None
    if len(y) <= 6 and traffic.batch_count.finite and traffic.batch_size.finite:
        try:
            exact = exact_drift(model, y, traffic, p)
        except ValueError:
            exact = None
    return DriftEstimate(mean, stderr, exact)


# ---------------------------------------------------------------- reports

@dataclass(frozen=True)
class DiagnosticsReport:
    V: float
    J: float
    log_w: float
    G: float | None
    lemma2_lhs: float | None
    in_C: bool | None
    epsilon: float | None
    log_B_threshold: float | None
    B_overflow: bool | None


def diagnose(
    y: Configuration,
    p: Partition,
    model,
    traffic: ArrivalSpec | None = None,
    *,
    marginals: bool = False,
    g2_max: float | None = None,
) -> DiagnosticsReport:
    """All observables for one state.  ``G`` needs exact marginals
    (``marginals=True``); ``in_C`` uses ``g2_max`` as an empirical stand-in for
    the unknown supremum of G2 and is only a proxy."""
    x = region_counts(y, p)
    log_w, _ = max_guaranteed_log_weight(x, p, model)
    G = lhs = in_C = eps = log_B = overflow = None
    if traffic is not None and traffic.load < model.mu:
        c = lemma_constants(traffic.load, model.mu, 2 ** p.K)
        eps, log_B, overflow = c.eps, c.log_B, c.overflow
    if marginals and traffic is not None:
        pk = region_marginals(model, y, p)
        G = drift_G(x, pk, traffic.load / p.K)
        if g2_max is not None:
            in_C = G >= -g2_max - 1
    if len(y) <= 12:
        q = q_S_exact(model, y, p)
        xs = _ints(x)
        lhs = math.fsum(float(qs) * _log_w_S(xs, S) for S, qs in q.items())
    return DiagnosticsReport(lyapunov_V(x), J_value(x), log_w, G, lhs, in_C, eps, log_B, overflow)


@dataclass(frozen=True)
class StabilityReport:
    tail_slope: float
    r_squared: float
    empty_visits: int
    tail_mean: float
    J_time_avg: float


def linear_fit(t: np.ndarray, v: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and R^2 (0 for a constant series)."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    tc = t - t.mean()
    vc = v - v.mean()
    sxx = float(tc @ tc)
    syy = float(vc @ vc)
    if sxx == 0:
        return 0.0, 0.0
    slope = float(tc @ vc) / sxx
    if syy == 0:
        return slope, 0.0
    ss_res = float(np.sum((vc - slope * tc) ** 2))
    return slope, 1.0 - ss_res / syy


MIN_TRACE = 100


def stability_detectors(trace, thinning: int | None = None) -> StabilityReport:
    """Trend of the particle count over the second half of a run.

    ``J_time_avg`` averages J over records at multiples of ``thinning`` (all
    records with J when ``thinning`` is None); NaN without diagnostics.
    """
    if len(trace) < MIN_TRACE:
        raise ValueError(f"trace too short: {len(trace)} records, need {MIN_TRACE}")
    t = np.array([r.t for r in trace], dtype=float)
    v = np.array([r.total_after for r in trace], dtype=float)
    tail = t > t[-1] / 2
    slope, r2 = linear_fit(t[tail], v[tail])
    Js = [r.J for r in trace if r.J is not None and (thinning is None or r.t % thinning == 0)]
    j_avg = float(np.mean(Js)) if Js else float("nan")
    return StabilityReport(
        tail_slope=slope,
        r_squared=r2,
        empty_visits=sum(1 for r in trace if r.is_empty),
        tail_mean=float(v[tail].mean()),
        J_time_avg=j_avg,
    )


def running_J_average(trace, thinning: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Slots and the running mean of J over regularly recorded slots."""
    recs = [r for r in trace if r.J is not None and (thinning is None or r.t % thinning == 0)]
    t = np.array([r.t for r in recs], dtype=np.int64)
    J = np.array([r.J for r in recs], dtype=float)
    return t, np.cumsum(J) / np.arange(1, len(J) + 1)


STABLE_SLOPE = 0.002
UNSTABLE_SLOPE = 0.005
UNSTABLE_R2 = 0.9
TAIL_MEAN_TOL = 0.1


def _regular(trace, thinning: int | None):
    return [r for r in trace if thinning is None or r.t % thinning == 0]


def bounded_tail_mean(trace, thinning: int | None = None, tol: float = TAIL_MEAN_TOL) -> bool:
    """Mean count over the last quarter within ``tol`` (relative) of the third quarter's."""
    recs = _regular(trace, thinning)
    if len(recs) < 4:
        return False
    v = np.array([r.total_after for r in recs], dtype=float)
    q = len(v) // 4
    m3, m4 = v[-2 * q : -q].mean(), v[-q:].mean()
    return bool(abs(m4 - m3) <= tol * max(m3, 1.0))


@dataclass(frozen=True)
class Verdict:
    stable: bool
    unstable: bool


def verdict(slope: float, r_squared: float, empty_visits: int, bounded: bool) -> Verdict:
    """Stable: flat tail and either a return to empty or a settled tail mean.
    Unstable: a clearly positive, well-fitted linear trend."""
    return Verdict(
        stable=bool(abs(slope) <= STABLE_SLOPE and (empty_visits >= 1 or bounded)),
        unstable=bool(slope >= UNSTABLE_SLOPE and r_squared >= UNSTABLE_R2),
    )


def run_verdict(trace, thinning: int | None = None) -> Verdict:
    rep = stability_detectors(trace)
    return verdict(rep.tail_slope, rep.r_squared, rep.empty_visits, bounded_tail_mean(trace, thinning))


def ks_uniform(locations) -> float:
    """Kolmogorov-Smirnov distance between the empirical CDF and Uniform[0, 1)."""
    locations = np.asarray(locations, dtype=float)
    if len(locations) == 0:
        return 0.0
    return float(stats.kstest(locations, "uniform").statistic)


def fraction_in(locations, lo: float, hi: float) -> float:
    locations = np.asarray(locations, dtype=float)
    if len(locations) == 0:
        return 0.0
    return float(np.mean((locations >= lo) & (locations < hi)))


def running_J_variation(trace, thinning: int | None = None) -> float:
    """Range of the running J average over its last quarter, relative to its final value."""
    _, avg = running_J_average(trace, thinning)
    if len(avg) < 4:
        raise ValueError("need at least 4 J records")
    tail = avg[len(avg) * 3 // 4 :]
    return float((tail.max() - tail.min()) / abs(avg[-1])) if avg[-1] else float("inf")
