"""Command line entry point: ``run``, ``gen-data`` and ``report``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .data import PRESETS, SyntheticConfig, generate_synthetic, save_csv
from .errors import ConfigError, DataError, DimensionError, TrainingError
from .harness import ExperimentConfig, read_results, run_experiment, write_reports

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 0, 2, 3, 4

log = logging.getLogger("mvrobust")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvrobust", description="Multi-view fusion models and missing-view robustness benchmark.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-fold progress")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="cross-validate methods and evaluate every missing-view scenario")
    run.add_argument("--config", required=True, help="JSON file with experiment settings")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--seed", type=int, help="global seed")
    run.add_argument("--folds", type=int, help="number of cross-validation folds")
    run.add_argument("--methods", help="comma-separated method names")
    source = run.add_mutually_exclusive_group()
    source.add_argument("--preset", choices=sorted(PRESETS), help="synthetic preset")
    source.add_argument("--manifest", help="CSV dataset manifest")
    run.add_argument("--jobs", type=int, help="parallel worker processes")

    gen = sub.add_parser("gen-data", help="write a synthetic preset as CSV files plus a manifest")
    gen.add_argument("--preset", required=True, choices=sorted(PRESETS))
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    report = sub.add_parser("report", help="re-aggregate results.csv from a previous run")
    report.add_argument("--in", dest="in_dir", required=True)
    return parser


def _run(args: argparse.Namespace) -> None:
    config = ExperimentConfig.from_file(args.config)
    overrides = {}
    if args.out is not None:
        overrides["out"] = args.out
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be non-negative")
        overrides["seed"] = args.seed
    if args.folds is not None:
        overrides["folds"] = args.folds
    if args.methods is not None:
        overrides["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.preset is not None:
        overrides.update(preset=args.preset, manifest=None)
    if args.manifest is not None:
        overrides.update(manifest=args.manifest, preset=None)
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if overrides:
        config = ExperimentConfig.from_dict({**dataclasses.asdict(config), **overrides})
    paths = run_experiment(config)
    print(f"wrote {', '.join(str(p) for p in paths.values())}")


def _gen_data(args: argparse.Namespace) -> None:
    dataset = generate_synthetic(SyntheticConfig(args.preset, n=args.n, seed=args.seed, folds=1))
    print(f"wrote {save_csv(dataset, args.out)}")


def _report(args: argparse.Namespace) -> None:
    rows = read_results(args.in_dir)
    if not rows:
        raise DataError(f"{Path(args.in_dir) / 'results.csv'} has no rows")
    paths = write_reports(rows, args.in_dir, {"source": "re-aggregated from results.csv"})
    print(f"wrote {paths['summary']}")


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _run, "gen-data": _gen_data, "report": _report}
    try:
        handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DimensionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
