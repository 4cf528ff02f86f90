"""Command-line entry point: render one figure from report CSVs."""

from __future__ import annotations

import argparse
import sys

from .errors import PlotkitError
from .figures import KINDS, FigureSpec, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plotkit",
        description="Render a figure from experiment CSV reports.",
    )
    parser.add_argument("inputs", nargs="+", help="input CSV report files")
    parser.add_argument("--kind", required=True, choices=KINDS, help="figure kind")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument(
        "--slope",
        type=float,
        default=0.5,
        help="reference guide slope for loglog-error (default: 0.5)",
    )
    parser.add_argument("--title", default=None, help="optional figure title")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(
        inputs=tuple(args.inputs),
        kind=args.kind,
        out=args.out,
        slope=args.slope,
        title=args.title,
    )
    try:
        out = render(spec)
    except PlotkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
