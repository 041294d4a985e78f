"""Command line entry point: ``admsched run|sweep|oracle``."""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import experiment, oracles
from .diagnostics import stability_detectors


def _run(args) -> int:
    config = experiment.load_config(args.config)
    if args.full_scale:
        config = dataclasses.replace(config, slots=experiment.FULL_SCALE_SLOTS)
    if args.slots is not None:
        config = dataclasses.replace(config, slots=args.slots)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    base = args.output_dir or Path(args.config).parent
    result, written = experiment.cmd_run(config, base)
    for kind, path in written.items():
        print(f"{kind}: {path}")
    print(f"final particles: {len(result.final_configuration)}, empty visits: {result.empty_visits}")
    if len(result.trace) >= 100:
        rep = stability_detectors(result.trace)
        print(f"tail slope: {rep.tail_slope:.6g} (R^2 {rep.r_squared:.3f}), tail mean: {rep.tail_mean:.1f}")
    return 0


def _sweep(args) -> int:
    sweep = experiment.load_sweep(args.config)
    if args.slots is not None:
        sweep = dataclasses.replace(sweep, base=dataclasses.replace(sweep.base, slots=args.slots))
    if args.parallelism is not None:
        sweep = dataclasses.replace(sweep, parallelism=args.parallelism)
    rows, path = experiment.cmd_sweep(sweep, args.output_dir or Path(args.config).parent)
    print(f"summary: {path} ({len(rows)} runs)")
    return 0


def _oracle(args) -> int:
    results = oracles.run_battery(n_max=args.n_max, trials=args.trials, seed=args.seed, draws=args.draws)
    width = max(len(r.name) for r in results)
    for r in results:
        note = r.detail or ""
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.instances:>5} instances  {note}")
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="admsched", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one configuration and write CSV files")
    run.add_argument("config", help="experiment JSON file")
    run.add_argument("--slots", type=int, help="override the slot count")
    run.add_argument("--full-scale", action="store_true", help=f"run {experiment.FULL_SCALE_SLOTS} slots")
    run.add_argument("--seed", type=int, help="override the seed")
    run.add_argument("--output-dir", type=Path,
                     help=f"output directory (default: ${experiment.OUTPUT_DIR_ENV} or the config's directory)")
    run.set_defaults(func=_run)

    sweep = sub.add_parser("sweep", help="run a lambda x seed grid and write a summary CSV")
    sweep.add_argument("config", help="sweep JSON file")
    sweep.add_argument("--slots", type=int, help="override the slot count of every run")
    sweep.add_argument("--parallelism", type=int, help="worker processes")
    sweep.add_argument("--output-dir", type=Path)
    sweep.set_defaults(func=_sweep)

    oracle = sub.add_parser("oracle", help="run the self-check battery")
    oracle.add_argument("--n-max", type=int, default=12, help="largest brute-force instance")
    oracle.add_argument("--trials", type=int, default=200, help="random instances per check")
    oracle.add_argument("--draws", type=int, default=20_000, help="sampler draws for the uniformity check")
    oracle.add_argument("--seed", type=int, default=0)
    oracle.set_defaults(func=_oracle)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (experiment.ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
