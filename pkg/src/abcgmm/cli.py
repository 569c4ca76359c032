"""Command line entry points.

Subcommands: ``estimate`` (single run), ``montecarlo`` (replication study),
``tune`` (bandwidth grid search), ``tworound`` (adaptive two-round study).
Exit codes: 0 success, 1 configuration error, 2 estimation failure rate
above the configured threshold.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .errors import ConfigError, EstimationError
from .harness import ExperimentConfig, emit_report, report_from_json, run_experiment, run_two_round, tune_bandwidth


def _add_common(parser):
    parser.add_argument("--config", required=True, help="experiment configuration file")
    parser.add_argument("--seed", type=int, default=None, help="override the base seed")
    parser.add_argument("--workers", type=int, default=None, help="override the worker count")
    parser.add_argument("--out", default=None, help="output path (default: stdout)")
    parser.add_argument("--format", choices=("csv", "json"), default=None)
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key, e.g. --set R=50 or --set model.n=100",
    )


def _load_config(args):
    config = ExperimentConfig.from_file(args.config)
    config = config.apply_overrides(args.overrides)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.workers is not None:
        config = replace(config, workers=args.workers)
    if args.out is not None:
        config = replace(config, out=args.out)
    if args.format is not None:
        config = replace(config, format=args.format)
    return config


def _deliver(report, config):
    text = report.to_csv() if config.format == "csv" else report.to_json()
    if config.out:
        emit_report(report, config.format, config.out)
        print(f"wrote {config.format} report to {config.out}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)


def _run(args, two_round=False, single=False):
    config = _load_config(args)
    if single:
        config = replace(config, R=1)
    report = run_two_round(config) if two_round else run_experiment(config)
    _deliver(report, config)
    if config.R > 0 and report.failures / config.R > config.failure_threshold:
        print(
            f"error: {report.failures}/{config.R} replications failed "
            f"(threshold {config.failure_threshold:g})",
            file=sys.stderr,
        )
        return 2
    return 0


def _run_tune(args):
    config = _load_config(args)
    config.validate()
    estimates = None
    if args.from_report:
        with open(args.from_report) as fh:
            report = report_from_json(fh.read())
        label = args.estimates_from
        estimates = [
            [rep["results"][label][name]["estimate"] for name in sorted(report.truth)]
            for rep in report.replications
            if not rep["failed"] and label in rep["results"]
        ]
        if not estimates:
            raise ConfigError(f"report carries no estimates for label {label!r}")
        config = replace(config, tune_source="estimate_centered")
    _, info = tune_bandwidth(config, estimates=estimates)
    text = json.dumps(info, sort_keys=True, indent=2) + "\n"
    if config.out:
        with open(config.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="abcgmm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, desc in (
        ("estimate", "single estimation run (R = 1)"),
        ("montecarlo", "replication study"),
        ("tworound", "two-round adaptive replication study"),
    ):
        p = sub.add_parser(name, help=desc)
        _add_common(p)

    p = sub.add_parser("tune", help="bandwidth grid search")
    _add_common(p)
    p.add_argument("--from-report", default=None, help="JSON report supplying first-round estimates")
    p.add_argument("--estimates-from", default="ll", help="estimator label to read estimates from")

    args = parser.parse_args(argv)
    try:
        if args.command == "estimate":
            return _run(args, single=True)
        if args.command == "montecarlo":
            return _run(args)
        if args.command == "tworound":
            return _run(args, two_round=True)
        return _run_tune(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except EstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
