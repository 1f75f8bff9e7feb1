"""plot <kind> --csv <path> --out <path>"""

import argparse
import sys

from .plots import PlotSpec, SchemaError, render


def build_parser():
    parser = argparse.ArgumentParser(prog="plot", description="Render a study CSV as a figure")
    parser.add_argument("kind", choices=["strong", "weak", "timing"])
    parser.add_argument("--csv", required=True, help="input study CSV")
    parser.add_argument("--out", required=True, help="output image path (png)")
    parser.add_argument("--title", default="", help="optional figure title")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        path = render(PlotSpec(args.kind, args.csv, args.out, title=args.title))
    except SchemaError as exc:
        print(f"plot: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
