"""Command-line surface: sketch, encode, decode, analyze, experiment, bdrate.

Exit codes: 0 success, 2 usage or validation error, 3 malformed file or
stream, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from idsecodec import eval as evaluation
from idsecodec.codec import decode_stream
from idsecodec.core import ConvergenceError, FormatError, load_pgm, write_pgm
from idsecodec.rdo import MetricConfig, encode_with_rdo, format_stats
from idsecodec.sketch import draw_sketch, read_sketch, sketch_linear_jacobian, write_importance_pgm, write_sketch
from idsecodec.toyfe import EXTRACTOR_KINDS, make_extractor

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_NUMERIC = 4


def _default_threads() -> int:
    env = os.environ.get("IDSE_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def cmd_sketch(args: argparse.Namespace) -> int:
    plane = load_pgm(args.input)
    fe = make_extractor(args.fe, plane.width, plane.height)
    s = draw_sketch(args.ns, fe.output_dim, args.seed)
    J = sketch_linear_jacobian(fe, plane, s)
    write_sketch(args.out, J)
    print(f"wrote {args.out}: n_s={J.n_s} n_p={J.n_p} grid={J.width}x{J.height}")
    return EXIT_OK


def cmd_encode(args: argparse.Namespace) -> int:
    plane = load_pgm(args.input)
    J = None
    if args.metric == "idse":
        if args.sketch is None:
            raise ValueError("--metric idse requires --sketch")
        J = read_sketch(args.sketch)
    config = MetricConfig(kind=args.metric, alpha=args.alpha, lambda_c=args.lambda_c)
    stream, decision, stats = encode_with_rdo(plane, args.qp, config, J=J, threads=args.threads)
    with open(args.out, "wb") as fh:
        fh.write(stream)
    if args.stats is not None:
        with open(args.stats, "w", encoding="ascii") as fh:
            fh.write(format_stats(decision))
    print(
        f"wrote {args.out}: {stats['stream_bytes']} bytes, "
        f"{stats['bpp']:.4f} bpp, psnr {stats['psnr']:.2f} dB, lambda {stats['lambda']:.6g}"
    )
    return EXIT_OK


def cmd_decode(args: argparse.Namespace) -> int:
    with open(args.input, "rb") as fh:
        data = fh.read()
    plane, header = decode_stream(data)
    write_pgm(args.out, plane.cropped())
    print(f"wrote {args.out}: {header.orig_width}x{header.orig_height} (qp {header.base_qp}, {header.metric})")
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    J = read_sketch(args.sketch)
    write_importance_pgm(args.out_map, J)
    print(f"wrote {args.out_map}: {J.width}x{J.height} importance map from n_s={J.n_s} sketch")
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    if args.out_dir is not None:
        os.makedirs(args.out_dir, exist_ok=True)
    result = evaluation.run_experiment(args.name, args.seed, args.out_dir)
    if args.name == "taylor_convergence":
        for row in result["rows"]:
            print(
                f"qp {row['qp']:2d}: fd {row['mean_fd']:.6g} idse {row['mean_idse']:.6g} "
                f"rel_gap {row['mean_rel_gap']:.4f}"
            )
    elif args.name == "diag_dominance":
        print(
            f"diag median {result['diag_median']:.6g} "
            f"[{result['diag_p15']:.6g}, {result['diag_p85']:.6g}] over {result['n_diag']} blocks"
        )
        print(
            f"offdiag median {result['offdiag_median']:.6g} "
            f"[{result['offdiag_p15']:.6g}, {result['offdiag_p85']:.6g}] over {result['n_offdiag']} pairs"
        )
    else:
        for axis, value in result["bd_rates"].items():
            print(f"bd-rate[{axis}] idse vs sse: {value:+.2f}%")
    return EXIT_OK


def _read_curve(path: str, label: str) -> evaluation.RdCurve:
    rates, qualities = [], []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise FormatError(f"{path}: expected 'rate,quality' lines, got {line!r}")
            try:
                rates.append(float(parts[0]))
                qualities.append(float(parts[1]))
            except ValueError as exc:
                raise FormatError(f"{path}: non-numeric entry in {line!r}") from exc
    if not rates:
        raise FormatError(f"{path}: no data lines")
    return evaluation.make_curve(label, rates, qualities)


def cmd_bdrate(args: argparse.Namespace) -> int:
    ref = _read_curve(args.ref, "reference")
    test = _read_curve(args.test, "test")
    print(f"{evaluation.bd_rate(ref, test):+.4f}%")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idsecodec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sketch", help="sketch a toy extractor's Jacobian into an SKJ1 file")
    p.add_argument("--input", required=True, help="8-bit binary PGM image")
    p.add_argument("--fe", required=True, choices=EXTRACTOR_KINDS, help="toy feature extractor")
    p.add_argument("--ns", required=True, type=int, help="sketch rows")
    p.add_argument("--seed", type=int, default=0, help="PRNG seed (default 0)")
    p.add_argument("--out", required=True, help="output SKJ1 path")
    p.set_defaults(func=cmd_sketch)

    p = sub.add_parser("encode", help="encode a PGM image to an IDS1 bitstream")
    p.add_argument("--input", required=True, help="8-bit binary PGM image")
    p.add_argument("--qp", required=True, type=int, help="base quantization parameter, 0..51")
    p.add_argument("--metric", default="sse", choices=("sse", "idse"), help="RDO distortion metric")
    p.add_argument("--sketch", default=None, help="SKJ1 sketch file (required for idse)")
    p.add_argument("--alpha", type=float, default=1.0, help="SSE regularization multiplier (default 1)")
    p.add_argument("--lambda-c", type=float, default=0.57, dest="lambda_c", help="Lagrangian constant (default 0.57)")
    p.add_argument("--threads", type=int, default=_default_threads(), help="block worker threads (default IDSE_THREADS or 1)")
    p.add_argument("--out", required=True, help="output bitstream path")
    p.add_argument("--stats", default=None, help="optional per-block stats file")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode an IDS1 bitstream to a PGM image")
    p.add_argument("--input", required=True, help="IDS1 bitstream")
    p.add_argument("--out", required=True, help="output PGM path")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("analyze", help="export a sketch's importance map as a 16-bit PGM")
    p.add_argument("--sketch", required=True, help="SKJ1 sketch file")
    p.add_argument("--out-map", required=True, dest="out_map", help="output 16-bit PGM path")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("experiment", help="run a named desk-scale experiment")
    p.add_argument("--name", required=True, choices=evaluation.EXPERIMENT_NAMES)
    p.add_argument("--seed", type=int, default=7, help="corpus seed (default 7)")
    p.add_argument("--out-dir", default=None, dest="out_dir", help="directory for csv/dat tables")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("bdrate", help="BD-rate between two rate,quality CSV curves")
    p.add_argument("--ref", required=True, help="reference curve csv (rate,quality lines)")
    p.add_argument("--test", required=True, help="test curve csv")
    p.set_defaults(func=cmd_bdrate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
