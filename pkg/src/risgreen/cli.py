"""Command-line entry point: ``risgreen {power-min,admission,sweep}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import ALGORITHMS, SWEEP_VARIABLES, ExperimentSpec, run_experiment
from .netmodel import ConfigError, SystemConfig, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ALL_FAILED = 3


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _add_common(p: argparse.ArgumentParser, default_algorithms: str) -> None:
    p.add_argument("--config", type=Path, help="JSON scenario file (defaults to the desk-scale scenario)")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--algorithms", default=default_algorithms,
                   help=f"comma-separated subset of {','.join(ALGORITHMS)}")
    p.add_argument("--out", type=Path, default=None, help="output file (stdout if omitted)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="fill wall_time_ms (makes output run-dependent)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="risgreen", description="RIS-aided network power experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("power-min", help="network power minimization at the configured SINR target"),
                "dc")
    _add_common(sub.add_parser("admission", help="user admission control at the configured SINR target"),
                "dc")
    sweep = sub.add_parser("sweep", help="sweep one scenario variable")
    _add_common(sweep, "dc")
    sweep.add_argument("--variable", choices=SWEEP_VARIABLES, default="sinr_threshold_db")
    sweep.add_argument("--values", default="0.5,1,1.5,2,2.5")
    sweep.add_argument("--mode", choices=("power-min", "admission"), default="power-min")
    return parser


def _spec_from_args(args) -> ExperimentSpec:
    scenario = load_config(args.config) if args.config else SystemConfig()
    if args.command == "sweep":
        try:
            values = tuple(float(v) for v in _csv_list(args.values))
        except ValueError as exc:
            raise ConfigError(f"bad sweep values: {exc}") from exc
        variable, mode = args.variable, args.mode.replace("-", "_")
    else:
        values = (scenario.sinr_threshold_db[0],)
        variable, mode = "sinr_threshold_db", args.command.replace("-", "_")
        if len(set(scenario.sinr_threshold_db)) > 1:
            raise ConfigError("per-user SINR targets differ; use the sweep command instead")
    return ExperimentSpec(scenario=scenario, sweep_variable=variable, sweep_values=values,
                          algorithms=tuple(_csv_list(args.algorithms)), trials=args.trials, mode=mode,
                          seed=args.seed, workers=args.workers, timing=args.timing)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = _spec_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = run_experiment(spec)
    text = report.csv_text() if args.format == "csv" else report.json_text()
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
    if report.all_failed:
        print(f"all {len(report.failures)} runs failed", file=sys.stderr)
        return EXIT_ALL_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
