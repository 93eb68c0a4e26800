"""plotcli: render experiment result tables into figures."""

from __future__ import annotations

import argparse
import sys

from .errors import EmptyDataError, SchemaError
from .render import FIGURE_KINDS, PlotSpec, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plotcli")
    sub = parser.add_subparsers(dest="command", required=True)
    plot = sub.add_parser("plot", help="render one figure from a CSV table")
    plot.add_argument("--csv", required=True, help="input table")
    plot.add_argument("--kind", required=True, choices=FIGURE_KINDS)
    plot.add_argument("--out", required=True, help="output image path (.png)")
    plot.add_argument("--title", default="")
    plot.add_argument(
        "--realized",
        action="store_true",
        help="plot realized instead of expected cumulative reward "
        "(reads the realized_rewards table schema)",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    value_column = "avg_cum_reward_realized" if args.realized else "avg_cum_reward"
    try:
        spec = PlotSpec(
            input_csv=args.csv,
            figure_kind=args.kind,
            out_path=args.out,
            title=args.title,
            value_column=value_column,
        )
        path = render(spec)
    except (SchemaError, EmptyDataError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
