"""Command line: render_figures --kind fig1 --in results.csv --out fig1.png"""

from __future__ import annotations

import argparse
import sys

from .render import FigureSpec, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="render_figures",
        description="render hiergibbs experiment CSVs as static figures",
    )
    parser.add_argument("--kind", required=True, choices=("fig1", "fig2", "fig3"))
    parser.add_argument(
        "--in", dest="inputs", required=True, action="append",
        help="input CSV (repeat for multi-panel figures)",
    )
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument(
        "--linear-y", action="store_true", help="linear instead of log y-axis"
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(
        kind=args.kind,
        input_csv=tuple(args.inputs),
        output_path=args.out,
        log_y=not args.linear_y,
    )
    try:
        path = render(spec)
    except (SchemaError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
