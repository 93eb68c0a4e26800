"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .errors import ConfigError
from .harness import (
    aggregate,
    parse_config,
    run_experiment,
    write_aggregate,
    write_results,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _load_config(path: str, seed: int | None, policies: str | None):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"])
    config = parse_config(text)
    if seed is not None:
        config = replace(config, master_seed=seed)
    if policies is not None:
        config = replace(config, policies=tuple(policies.split(",")))
        problems = config.validate()
        if problems:
            raise ConfigError(problems)
    return config


def _cmd_run(args) -> int:
    config = _load_config(args.config, args.seed, args.policies)
    result = run_experiment(config, jobs=args.jobs)
    out_dir = args.out or f"results-{config.name}"
    paths = write_results(result, out_dir)
    agg_path = write_aggregate(aggregate(result.records), Path(out_dir) / "aggregate.csv")
    paths["aggregate"] = agg_path
    for label, path in sorted(paths.items()):
        print(f"{label}: {path}")
    if result.failures:
        for f in result.failures:
            print(f"failure: repetition={f.repetition} policy={f.policy}: {f.message}",
                  file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_validate(args) -> int:
    _load_config(args.config, None, None)
    print("config OK")
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    config = _load_config(args.config, args.seed, None)
    config = replace(config, emit_diagnostics=True)
    result = run_experiment(config, jobs=args.jobs)
    doc = {
        "diagnostics": None if result.diagnostics is None else asdict(result.diagnostics),
        "failures": [asdict(f) for f in result.failures],
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_RUNTIME if result.failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lowrank-bandit",
        description="Multi-task linear bandit experiments with a trace-norm greedy policy.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment and write result tables")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--out", default=None, help="output directory")
    run_p.add_argument("--seed", type=int, default=None, help="override master seed")
    run_p.add_argument("--jobs", type=int, default=1,
                       help="parallel repetitions (env LOWRANK_BANDIT_THREADS overrides)")
    run_p.add_argument("--policies", default=None,
                       help="comma-separated subset of the configured policies")
    run_p.set_defaults(func=_cmd_run)

    val_p = sub.add_parser("validate", help="validate a config file")
    val_p.add_argument("--config", required=True)
    val_p.set_defaults(func=_cmd_validate)

    diag_p = sub.add_parser("diagnose", help="run only the diagnostics suite")
    diag_p.add_argument("--config", required=True)
    diag_p.add_argument("--seed", type=int, default=None)
    diag_p.add_argument("--jobs", type=int, default=1)
    diag_p.set_defaults(func=_cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.violations:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
