"""Command line: render one figure from an export directory."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from .render import render
from .tables import FigureKind, FigureSpec, TableError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="render",
        description="Render a figure from CSV/JSON exports; writes the "
        "image plus a <image>.manifest.json sidecar.",
    )
    parser.add_argument("--in", dest="in_dir", required=True,
                        help="directory holding the exported artifacts")
    parser.add_argument("--kind", required=True,
                        choices=[k.value for k in FigureKind])
    parser.add_argument("--out", required=True,
                        help="output image path (format from the extension)")
    parser.add_argument("--dpi", type=int, default=150)
    parser.add_argument("--title", default=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    spec = FigureSpec(
        in_dir=Path(args.in_dir),
        kind=FigureKind(args.kind),
        out_path=Path(args.out),
        dpi=args.dpi,
        title=args.title,
    )
    try:
        render(spec)
    except TableError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
