"""Command-line entry points.

Subcommands: ``run-loop``, ``sensitivity``, ``logistic-bounds``,
``mmd-demo``, and ``classify``. Each takes ``--config`` (JSON, optional;
defaults apply) and ``--out`` (output directory) and writes
``metrics.json`` plus CSV tables, rendering figures alongside unless
disabled. Exit codes: 0 success, 2 configuration error, 3 numerical
failure.
"""

import argparse
import sys
from pathlib import Path

from . import harness, reporting
from .errors import ConfigError, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load(args) -> harness.ExperimentConfig:
    if args.config:
        config = harness.load_config(args.config)
    else:
        config = harness.ExperimentConfig()
    if args.no_figures:
        config.figures = False
    return config


def _prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_run_loop(args) -> int:
    config = _load(args)
    if config.scenario not in ("full-loop", "pure-safeopt", "always-identify"):
        config.scenario = "full-loop"
    out = _prepare_out(args)
    result = harness.run_algorithm1(config)
    reporting.write_metrics(out / "metrics.json", {
        "config": config.to_dict(), "metrics": result.metrics.to_dict()})
    reporting.write_csv(out / "episodes.csv", result.episode_rows)
    reporting.write_csv(out / "bounds.csv", result.decision_rows)
    if config.figures:
        reporting.render_loop_figure(out, result.episode_rows, config.scenario)
    return EXIT_OK


def _cmd_sensitivity(args) -> int:
    config = _load(args)
    config.scenario = "sensitivity"
    out = _prepare_out(args)
    result = harness.run_sensitivity(config)
    counts = {repr(p): {str(c): v for c, v in per.items()}
              for p, per in result.counts.items()}
    reporting.write_metrics(out / "metrics.json", {
        "config": config.to_dict(), "counts": counts,
        "model_size": result.model_size})
    reporting.write_csv(out / "bounds.csv", result.decision_rows)
    if config.figures:
        reporting.render_sensitivity_figure(out, result.counts,
                                            config.sensitivity_heights)
    return EXIT_OK


def _cmd_logistic_bounds(args) -> int:
    config = _load(args)
    config.scenario = "logistic-bounds"
    out = _prepare_out(args)
    result = harness.run_logistic_bounds(config)
    reporting.write_metrics(out / "metrics.json", {
        "config": config.to_dict(),
        "coverage_at_queries": result.coverage,
        "mean_total_bound": result.mean_total,
        "model_size": result.model_size})
    reporting.write_csv(out / "bounds.csv", result.rows)
    if config.figures:
        reporting.render_bounds_figure(out, result.rows)
    return EXIT_OK


def _cmd_mmd_demo(args) -> int:
    config = _load(args)
    config.scenario = "mmd-demo"
    out = _prepare_out(args)
    result = harness.run_mmd_demo(config)
    reporting.write_metrics(out / "metrics.json", {
        "config": config.to_dict(), "summaries": result.summaries})
    reporting.write_csv(out / "mmd.csv", result.rows)
    if config.figures:
        reporting.render_mmd_figure(out, result.rows)
    return EXIT_OK


def _cmd_classify(args) -> int:
    config = _load(args)
    config.scenario = "classify"
    out = _prepare_out(args)
    result = harness.run_classify(config)
    reporting.write_metrics(out / "metrics.json", {
        "config": config.to_dict(), "model_size": result.model_size})
    reporting.write_csv(out / "bounds.csv", result.rows)
    return EXIT_OK


_COMMANDS = {
    "run-loop": _cmd_run_loop,
    "sensitivity": _cmd_sensitivity,
    "logistic-bounds": _cmd_logistic_bounds,
    "mmd-demo": _cmd_mmd_demo,
    "classify": _cmd_classify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contextsafe",
        description="Safe exploration with uncertain discrete contexts.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (defaults apply when omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--no-figures", action="store_true",
                       help="skip rendering PNG figures")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
