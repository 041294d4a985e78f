"""JSON experiment configs, single runs, sweeps and CSV emission."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .admissibility import Configuration, PairwiseDistance, RegionGraph
from .diagnostics import J_value, lyapunov_V, max_guaranteed_log_weight, region_counts, stability_detectors
from .dynamics import RunResult, simulate
from .geometry import build_partition
from .rng import stream
from .scheduling import make_scheduler
from .traffic import ArrivalSpec, Geometric, Poisson

OUTPUT_DIR_ENV = "ADMSCHED_OUTPUT_DIR"
DEFAULT_SLOTS = 200_000
FULL_SCALE_SLOTS = 1_000_000


class ConfigError(ValueError):
    """Invalid experiment description; the message names the field."""


def _check_keys(d, allowed: set[str], where: str, required: set[str] = frozenset()):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    missing = set(required) - set(d)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def _int(value, where: str, lo: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(f"{where}: must be >= {lo}, got {value}")
    return value


def _unit(value, where: str, closed_low: bool) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    ok = (0 <= value < 1) if closed_low else (0 < value < 1)
    if not ok:
        raise ConfigError(f"{where}: out of range, got {value}")
    return float(value)


@dataclass(frozen=True)
class Outputs:
    trajectory: str | None = "trajectory.csv"
    terminal: str | None = "terminal.csv"
    diagnostics: str | None = "diagnostics.csv"


@dataclass(frozen=True)
class ExperimentConfig:
    r: float
    arrivals: ArrivalSpec
    scheduler: str = "random"
    zeta: float | None = None
    K: int | None = None
    conflict_edges: tuple[tuple[int, int], ...] | None = None
    slots: int = DEFAULT_SLOTS
    seed: int = 0
    thinning: int = 100
    diagnostics: bool = False
    initial: tuple[float, ...] = ()
    outputs: Outputs = field(default_factory=Outputs)

    def __post_init__(self):
        _unit(self.r, "space.r", closed_low=False)
        if self.scheduler not in ("random", "priority"):
            raise ConfigError(f"scheduler.type: unknown scheduler {self.scheduler!r}")
        if self.scheduler == "priority":
            if self.zeta is None:
                raise ConfigError("scheduler.zeta: required for priority scheduling")
            if self.conflict_edges is not None:
                raise ConfigError("scheduler.type: priority scheduling needs the protocol model")
        if self.zeta is not None:
            _unit(self.zeta, "scheduler.zeta", closed_low=True)
        _int(self.slots, "slots", 0)
        _int(self.seed, "seed", 0)
        if self.seed >= 2**64:
            raise ConfigError("seed: must fit in 64 bits")
        _int(self.thinning, "thinning", 1)
        for i, loc in enumerate(self.initial):
            _unit(loc, f"initial[{i}]", closed_low=True)
        if self.conflict_edges is not None and self.K is None:
            raise ConfigError("partition.K: required for the region_graph model")
        try:
            self.partition()
        except ValueError as exc:
            raise ConfigError(f"partition.K: {exc}") from None

    def model(self):
        if self.conflict_edges is None:
            return PairwiseDistance(self.r)
        return RegionGraph(self.K, frozenset(self.conflict_edges))

    def partition(self):
        if self.conflict_edges is None:
            return build_partition(self.r, self.K)
        return self.model().partition()

    def with_lambda(self, lam: float) -> "ExperimentConfig":
        count = self.arrivals.batch_count
        if isinstance(count, Poisson):
            new = Poisson(lam)
        elif isinstance(count, Geometric):
            new = Geometric(lam)
        else:
            raise ConfigError("arrivals.batch_count: a lambda sweep needs a poisson or geometric batch count")
        return dataclasses.replace(self, arrivals=ArrivalSpec(new, self.arrivals.batch_size))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _check_keys(
            d,
            {"space", "partition", "model", "scheduler", "arrivals", "slots", "seed", "thinning",
             "outputs", "diagnostics", "initial"},
            "config",
            {"space", "arrivals"},
        )
        _check_keys(d["space"], {"r"}, "space", {"r"})
        part = d.get("partition", {})
        _check_keys(part, {"K"}, "partition")
        K = part.get("K")
        if K is not None:
            _int(K, "partition.K", 1)
        model = d.get("model", {"type": "protocol"})
        _check_keys(model, {"type", "edges"}, "model", {"type"})
        edges = None
        if model["type"] == "region_graph":
            try:
                edges = tuple((int(a), int(b)) for a, b in model.get("edges", []))
            except (TypeError, ValueError):
                raise ConfigError("model.edges: expected a list of [a, b] pairs") from None
        elif model["type"] != "protocol":
            raise ConfigError(f"model.type: unknown model {model['type']!r}")
        elif "edges" in model:
            raise ConfigError("model.edges: only valid for the region_graph model")
        sched = d.get("scheduler", {"type": "random"})
        _check_keys(sched, {"type", "zeta"}, "scheduler", {"type"})
        try:
            arrivals = ArrivalSpec.from_dict(d["arrivals"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        outs = d.get("outputs", {})
        _check_keys(outs, {"trajectory", "terminal", "diagnostics"}, "outputs")
        diag = d.get("diagnostics", {})
        _check_keys(diag, {"enabled"}, "diagnostics")
        if not isinstance(diag.get("enabled", False), bool):
            raise ConfigError("diagnostics.enabled: expected true or false")
        init = d.get("initial", {})
        _check_keys(init, {"locations"}, "initial")
        return cls(
            r=d["space"]["r"],
            arrivals=arrivals,
            scheduler=sched["type"],
            zeta=sched.get("zeta"),
            K=K,
            conflict_edges=edges,
            slots=d.get("slots", DEFAULT_SLOTS),
            seed=d.get("seed", 0),
            thinning=d.get("thinning", 100),
            diagnostics=diag.get("enabled", False),
            initial=tuple(init.get("locations", ())),
            outputs=Outputs(**{k: outs.get(k, getattr(Outputs(), k)) for k in ("trajectory", "terminal", "diagnostics")}),
        )

    def to_dict(self) -> dict:
        d = {
            "space": {"r": self.r},
            "partition": {"K": self.K},
            "model": {"type": "protocol"} if self.conflict_edges is None
            else {"type": "region_graph", "edges": [list(e) for e in self.conflict_edges]},
            "scheduler": {"type": self.scheduler} | ({"zeta": self.zeta} if self.zeta is not None else {}),
            "arrivals": self.arrivals.to_dict(),
            "slots": self.slots,
            "seed": self.seed,
            "thinning": self.thinning,
            "outputs": dataclasses.asdict(self.outputs),
            "diagnostics": {"enabled": self.diagnostics},
        }
        if self.initial:
            d["initial"] = {"locations": list(self.initial)}
        return d


@dataclass(frozen=True)
class SweepConfig:
    base: ExperimentConfig
    lambda_grid: tuple[float, ...]
    seeds: tuple[int, ...]
    parallelism: int = 1
    summary: str = "summary.csv"

    def __post_init__(self):
        if not self.lambda_grid:
            raise ConfigError("lambda_grid: must not be empty")
        if not self.seeds:
            raise ConfigError("seeds: must not be empty")
        for lam in self.lambda_grid:
            if not (isinstance(lam, (int, float)) and lam > 0 and math.isfinite(lam)):
                raise ConfigError(f"lambda_grid: bad value {lam!r}")
        for s in self.seeds:
            _int(s, "seeds", 0)
        _int(self.parallelism, "parallelism", 1)
        self.base.with_lambda(self.lambda_grid[0])

    def runs(self) -> list[ExperimentConfig]:
        return [
            dataclasses.replace(self.base.with_lambda(lam), seed=s)
            for lam in sorted(set(self.lambda_grid))
            for s in sorted(set(self.seeds))
        ]

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        _check_keys(d, {"base", "lambda_grid", "seeds", "parallelism", "summary"}, "sweep", {"base", "lambda_grid", "seeds"})
        return cls(
            base=ExperimentConfig.from_dict(d["base"]),
            lambda_grid=tuple(d["lambda_grid"]),
            seeds=tuple(d["seeds"]),
            parallelism=d.get("parallelism", 1),
            summary=d.get("summary", "summary.csv"),
        )


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(_read_json(path))


def load_sweep(path) -> SweepConfig:
    return SweepConfig.from_dict(_read_json(path))


# ---------------------------------------------------------------- running

def make_observer(config: ExperimentConfig):
    model, p = config.model(), config.partition()

    def observe(y: Configuration):
        x = region_counts(y, p)
        log_w, _ = max_guaranteed_log_weight(x, p, model)
        return lyapunov_V(x), J_value(x), log_w

    return observe


def build_run(config: ExperimentConfig, on_slot=None) -> RunResult:
    """Run ``config`` from its initial state with the named seed streams."""
    model = config.model()
    scheduler = make_scheduler(config.scheduler, config.zeta)
    initial = Configuration.from_locations(config.initial) if config.initial else None
    trace, y, empty = simulate(
        model,
        config.arrivals,
        scheduler,
        config.slots,
        stream(config.seed, "arrivals"),
        stream(config.seed, "scheduler"),
        thinning=config.thinning,
        initial=initial,
        observe=make_observer(config) if config.diagnostics else None,
        on_slot=on_slot,
    )
    return RunResult(trace, y, empty, config.seed, config.slots, config.thinning)


def output_dir(default: Path | str = ".") -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV) or default)


def _resolve(name: str | None, base: Path) -> Path | None:
    """Relative names live under ``base``; the env override also captures absolute ones."""
    if name is None:
        return None
    path = Path(name)
    if OUTPUT_DIR_ENV in os.environ and path.is_absolute():
        return base / path.name
    return path if path.is_absolute() else base / path


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="ascii")


def _fmt(v: float) -> str:
    return repr(float(v))


def write_outputs(result: RunResult, config: ExperimentConfig, base: Path) -> dict[str, Path]:
    written = {}
    traj = _resolve(config.outputs.trajectory, base)
    if traj is not None:
        _write_csv(traj, ["t", "total", "arrived", "removed"],
                   ([r.t, r.total_after, r.arrived, r.removed] for r in result.trace))
        written["trajectory"] = traj
    term = _resolve(config.outputs.terminal, base)
    if term is not None:
        locs = np.sort(result.final_configuration.locations)
        _write_csv(term, ["location"], ([_fmt(v)] for v in locs))
        written["terminal"] = term
    diag = _resolve(config.outputs.diagnostics, base)
    if config.diagnostics and diag is not None:
        _write_csv(diag, ["t", "total", "V", "J", "logw"],
                   ([r.t, r.total_after, _fmt(r.V), _fmt(r.J), _fmt(r.logw)] for r in result.trace))
        written["diagnostics"] = diag
    return written


def cmd_run(config: ExperimentConfig, base: Path | str = ".") -> tuple[RunResult, dict[str, Path]]:
    result = build_run(config)
    return result, write_outputs(result, config, output_dir(base))


SUMMARY_HEADER = ["lambda", "seed", "tail_slope", "r_squared", "tail_mean", "empty_visits"]


class SweepRunError(RuntimeError):
    pass


def _summary_row(config: ExperimentConfig) -> list:
    try:
        result = build_run(config)
        rep = stability_detectors(result.trace)
    except Exception as exc:  # noqa: BLE001 - rewrapped with the failing point
        raise SweepRunError(f"run lambda={config.arrivals.lam} seed={config.seed} failed: {exc}") from exc
    return [config.arrivals.lam, config.seed, rep.tail_slope, rep.r_squared, rep.tail_mean, result.empty_visits]


def sweep_rows(sweep: SweepConfig) -> list[list]:
    runs = sweep.runs()
    if sweep.parallelism == 1 or len(runs) == 1:
        rows = [_summary_row(c) for c in runs]
    else:
        with ProcessPoolExecutor(max_workers=sweep.parallelism) as pool:
            rows = list(pool.map(_summary_row, runs))
    return sorted(rows, key=lambda row: (row[0], row[1]))


def cmd_sweep(sweep: SweepConfig, base: Path | str = ".") -> tuple[list[list], Path]:
    rows = sweep_rows(sweep)
    path = _resolve(sweep.summary, output_dir(base))
    _write_csv(path, SUMMARY_HEADER,
               ([_fmt(r[0]), r[1], _fmt(r[2]), _fmt(r[3]), _fmt(r[4]), r[5]] for r in rows))
    return rows, path
