"""Command-line entry point: ``hiergibbs <experiment> [options]``."""

from __future__ import annotations

import argparse
import sys

from .errors import HierGibbsError
from .experiments import (
    SUBCOMMANDS,
    build_config,
    parse_config_text,
    run_experiment,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiergibbs",
        description=(
            "Gibbs samplers and convergence analysis for two-level "
            "hierarchical models"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, experiment in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run the {experiment} experiment")
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--jobs", type=int, help="concurrent replicates")
        p.add_argument("--seed", type=int, help="override base_seed")
        p.add_argument("--out", help="output CSV path")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override any config key (repeatable)",
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    raw = {}
    if args.config:
        try:
            with open(args.config) as handle:
                raw = parse_config_text(handle.read())
        except OSError as err:
            print(f"error: cannot read config {args.config}: {err}", file=sys.stderr)
            return 2
    for item in args.set:
        if "=" not in item:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return 2
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()

    overrides = {}
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.out is not None:
        overrides["output_path"] = args.out

    try:
        config = build_config(SUBCOMMANDS[args.command], raw, **overrides)
        rows, _ = run_experiment(config)
    except HierGibbsError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(f"wrote {len(rows)} rows to {config.output_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
