"""Command-line entry point: sketch a backbone at an image, or validate SKJ1 files."""

from __future__ import annotations

import argparse
import sys

from pysketch.backbones import BACKBONE_NAMES, ModelLoadError, make_spec
from pysketch.sketch import SketchMemoryError, sketch_dnn
from pysketch.validate import validate_sketch

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pysketch",
        description="Export a sketched DNN Jacobian as an SKJ1 file, or validate one.",
    )
    parser.add_argument("--image", help="input image (converted to grayscale)")
    parser.add_argument(
        "--model", default="tinyconv", choices=BACKBONE_NAMES, help="backbone (default tinyconv)"
    )
    parser.add_argument(
        "--tap", default=None, help="module whose output is f(x) (default: per-model)"
    )
    parser.add_argument("--ns", type=int, default=8, help="sketch rows (default 8)")
    parser.add_argument("--seed", type=int, default=0, help="PRNG seed (default 0)")
    parser.add_argument("--out", help="output SKJ1 path")
    parser.add_argument(
        "--validate", metavar="PATH", default=None,
        help="validate an existing SKJ1 file instead of sketching",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.validate is not None:
            report = validate_sketch(args.validate)
            print(report.summary())
            return EXIT_OK if report.ok else EXIT_FORMAT
        if args.image is None or args.out is None:
            raise ValueError("--image and --out are required unless --validate is given")
        spec = make_spec(args.model, tap=args.tap)
        info = sketch_dnn(args.image, spec, args.ns, args.seed, args.out)
        print(
            f"wrote {args.out}: {info['n_s']} rows x {info['width']}x{info['height']} grid, "
            f"{info['n_f']} features, tag {info['tag']!r}"
        )
        return EXIT_OK
    except (ValueError, OSError, ModelLoadError, SketchMemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
