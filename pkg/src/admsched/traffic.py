"""Batch arrival process: a random number of batches per slot, each with a
random size and an independent uniform location on the circle."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .geometry import SCALE, Partition


class Distribution:
    """A non-negative integer law; subclasses define ``mean`` and ``sample``."""

    finite = False
    mean: float

    def sample(self, rng: np.random.Generator, size: int | None = None):
        raise NotImplementedError

    def prob_at_most_one(self) -> float:
        raise NotImplementedError

    def support(self) -> list[tuple[int, float]]:
        raise ValueError(f"{type(self).__name__} has unbounded support")

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Deterministic(Distribution):
    value: int
    finite = True

    def __post_init__(self):
        if self.value < 0 or int(self.value) != self.value:
            raise ValueError(f"deterministic value must be a non-negative integer, got {self.value!r}")

    @property
    def mean(self) -> float:
        return float(self.value)

    def sample(self, rng, size=None):
        if size is None:
            return int(self.value)
        return np.full(size, int(self.value), dtype=np.int64)

    def prob_at_most_one(self) -> float:
        return 1.0 if self.value <= 1 else 0.0

    def support(self):
        return [(int(self.value), 1.0)]

    def to_dict(self):
        return {"type": "deterministic", "value": int(self.value)}


@dataclass(frozen=True)
class Poisson(Distribution):
    mean: float

    def __post_init__(self):
        if not self.mean >= 0 or math.isinf(self.mean):
            raise ValueError(f"poisson mean must be finite and >= 0, got {self.mean!r}")

    def sample(self, rng, size=None):
        if size is None:
            return int(rng.poisson(self.mean))
        return rng.poisson(self.mean, size).astype(np.int64)

    def prob_at_most_one(self) -> float:
        return math.exp(-self.mean) * (1.0 + self.mean)

    def to_dict(self):
        return {"type": "poisson", "mean": self.mean}


@dataclass(frozen=True)
class Geometric(Distribution):
    """Failures before the first success, parametrised by its mean."""

    mean: float

    def __post_init__(self):
        if not self.mean >= 0 or math.isinf(self.mean):
            raise ValueError(f"geometric mean must be finite and >= 0, got {self.mean!r}")

    @property
    def p(self) -> float:
        return 1.0 / (1.0 + self.mean)

    def sample(self, rng, size=None):
        # numpy's geometric counts trials (support 1, 2, ...)
        if size is None:
            return int(rng.geometric(self.p)) - 1
        return rng.geometric(self.p, size).astype(np.int64) - 1

    def prob_at_most_one(self) -> float:
        p = self.p
        return p + p * (1 - p)

    def to_dict(self):
        return {"type": "geometric", "mean": self.mean}


@dataclass(frozen=True)
class Categorical(Distribution):
    values: tuple[int, ...]
    probs: tuple[float, ...]
    finite = True

    def __post_init__(self):
        if len(self.values) != len(self.probs) or not self.values:
            raise ValueError("categorical needs matching, non-empty values and probs")
        if any(v < 0 or int(v) != v for v in self.values):
            raise ValueError("categorical values must be non-negative integers")
        if any(q < 0 for q in self.probs) or abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError("categorical probs must be non-negative and sum to 1")
        if len(set(self.values)) != len(self.values):
            raise ValueError("categorical values must be distinct")

    @property
    def mean(self) -> float:
        return math.fsum(v * q for v, q in zip(self.values, self.probs))

    def sample(self, rng, size=None):
        vals = np.asarray(self.values, dtype=np.int64)
        probs = np.asarray(self.probs, dtype=float)
        probs = probs / probs.sum()
        if size is None:
            return int(rng.choice(vals, p=probs))
        return rng.choice(vals, size=size, p=probs)

    def prob_at_most_one(self) -> float:
        return math.fsum(q for v, q in zip(self.values, self.probs) if v <= 1)

    def support(self):
        return [(int(v), float(q)) for v, q in zip(self.values, self.probs) if q > 0]

    def to_dict(self):
        return {"type": "categorical", "values": list(self.values), "probs": list(self.probs)}


def distribution_from_dict(d: dict, where: str = "distribution") -> Distribution:
    if not isinstance(d, dict) or "type" not in d:
        raise ValueError(f"{where}: expected an object with a 'type' field")
    kind = d["type"]
    allowed = {
        "deterministic": {"value"},
        "poisson": {"mean"},
        "geometric": {"mean"},
        "categorical": {"values", "probs"},
    }
    if kind not in allowed:
        raise ValueError(f"{where}.type: unknown distribution {kind!r}")
    extra = set(d) - allowed[kind] - {"type"}
    missing = allowed[kind] - set(d)
    if extra:
        raise ValueError(f"{where}: unknown keys {sorted(extra)}")
    if missing:
        raise ValueError(f"{where}: missing keys {sorted(missing)}")
    try:
        if kind == "deterministic":
            return Deterministic(d["value"])
        if kind == "poisson":
            return Poisson(float(d["mean"]))
        if kind == "geometric":
            return Geometric(float(d["mean"]))
        return Categorical(tuple(d["values"]), tuple(float(q) for q in d["probs"]))
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class ArrivalSpec:
    batch_count: Distribution
    batch_size: Distribution = Deterministic(1)
    stream: str = "arrivals"
    idle_ok: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.batch_count.mean > 0 or (self.idle_ok and self.batch_count.mean == 0)):
            raise ValueError("mean number of batches per slot must be positive")
        if not self.batch_size.mean > 0:
            raise ValueError("mean batch size must be positive")
        if not self.batch_size.prob_at_most_one() > 0:
            raise ValueError("batches must have size <= 1 with positive probability")

    @property
    def lam(self) -> float:
        return self.batch_count.mean

    @property
    def beta(self) -> float:
        return self.batch_size.mean

    @property
    def load(self) -> float:
        """Mean number of particles per slot."""
        return self.lam * self.beta

    @classmethod
    def idle(cls) -> "ArrivalSpec":
        """No arrivals at all; only for tests and drift baselines, never from a config."""
        return cls(Deterministic(0), Deterministic(1), idle_ok=True)

    @classmethod
    def poisson_unit(cls, lam: float) -> "ArrivalSpec":
        return cls(Poisson(lam), Deterministic(1))

    @classmethod
    def from_dict(cls, d: dict) -> "ArrivalSpec":
        extra = set(d) - {"batch_count", "batch_size"}
        if extra:
            raise ValueError(f"arrivals: unknown keys {sorted(extra)}")
        if "batch_count" not in d:
            raise ValueError("arrivals.batch_count: missing")
        count = distribution_from_dict(d["batch_count"], "arrivals.batch_count")
        size = distribution_from_dict(d.get("batch_size", {"type": "deterministic", "value": 1}), "arrivals.batch_size")
        try:
            return cls(count, size)
        except ValueError as exc:
            raise ValueError(f"arrivals: {exc}") from None

    def to_dict(self) -> dict:
        return {"batch_count": self.batch_count.to_dict(), "batch_size": self.batch_size.to_dict()}


@dataclass(frozen=True)
class ArrivalBatchList:
    """Batches arriving in one slot: grid locations and sizes."""

    ticks: np.ndarray
    sizes: np.ndarray

    def __len__(self) -> int:
        return len(self.ticks)

    def __iter__(self) -> Iterator[tuple[float, int]]:
        return iter(zip((self.ticks / SCALE).tolist(), self.sizes.tolist()))

    @property
    def total(self) -> int:
        return int(self.sizes.sum())

    def particle_ticks(self) -> np.ndarray:
        """One entry per arriving particle (batch members share a location)."""
        return np.repeat(self.ticks, self.sizes)


def sample_arrivals(spec: ArrivalSpec, rng: np.random.Generator) -> ArrivalBatchList:
    count = spec.batch_count.sample(rng)
    if count == 0:
        return ArrivalBatchList(np.empty(0, np.int64), np.empty(0, np.int64))
    ticks = rng.integers(0, SCALE, size=count, dtype=np.int64)
    sizes = np.asarray(spec.batch_size.sample(rng, count), dtype=np.int64)
    return ArrivalBatchList(ticks, sizes)


def expected_per_region(spec: ArrivalSpec, p: Partition) -> float:
    return spec.load / p.K
