"""plots command: regenerate figures from run directories."""

import argparse
import sys
from typing import List, Optional

from .figures import FigureSpec, render
from .runs import SchemaError, SummaryMismatchError

FIGURE_TYPES = ("regret", "violation", "performance", "tradeoff",
                "sensitivity")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plots",
        description="Regenerate figures from simulator run directories.")
    parser.add_argument("figure", choices=FIGURE_TYPES,
                        help="tradeoff = regret and violation side by side; "
                             "sensitivity reads a sweep manifest directory")
    parser.add_argument("--runs", nargs="+", required=True,
                        help="run directories (one sweep root for "
                             "sensitivity)")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--log-x", action="store_true",
                        help="logarithmic round axis")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    panels = (("regret", "violation") if args.figure == "tradeoff"
              else (args.figure,))
    try:
        spec = FigureSpec(args.runs, panels,
                          x_scale="log" if args.log_x else "linear",
                          out_path=args.out)
        result = render(spec)
    except (SchemaError, SummaryMismatchError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(result["path"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
