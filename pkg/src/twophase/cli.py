"""Command-line entry point.

Exit codes: 0 success, 1 usage or config error, 2 bound violation,
3 internal error.  Command-line flags override values from the config file;
``--jobs`` defaults to ``$TPB_JOBS`` (else 1) and never changes results.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import (
    ConfigError,
    default_jobs,
    emit_csv,
    emit_curves,
    emit_report_json,
    parse_config,
    run_experiment,
    with_overrides,
)
from .theory import TheoryError

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION, EXIT_INTERNAL = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twophase", description="Monte-Carlo runs of the Two-Phase bandit algorithm.")
    p.add_argument("--config", required=True, type=Path, help="experiment config file")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--trials", type=int, help="override the number of trials")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default $TPB_JOBS or 1)")
    p.add_argument("--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    jobs = args.jobs if args.jobs is not None else default_jobs()
    if jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        config = parse_config(args.config.read_text())
        config = with_overrides(config, args.trials, args.seed)
        report = run_experiment(config, jobs=jobs)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except TheoryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        logging.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL

    try:
        emit_csv(report, args.out / "results.csv")
        emit_curves(report, args.out / "curves")
        emit_report_json(report, args.out / "report.json")
    except OSError as exc:
        print(f"error writing outputs: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    if args.verbose:
        print(report.summary())
    if report.violations:
        print(f"bound violated at {len(report.violations)} checkpoint(s)", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
