"""Benchmark the compiled quantize/bit-count kernels against the pure-Python fallback.

Times the two hot kernels directly (both backends imported side by side) and a
whole-image encode in fresh subprocesses, one per backend, since the backend is
frozen at import time.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--encode-repeat N]
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from idsecodec import _kernels_py
from idsecodec.core import make_rng

try:
    from idsecodec import _kernels
except ImportError:
    _kernels = None

_ENCODE_SNIPPET = """
import time
from idsecodec.core import ImagePlane, make_rng
from idsecodec.rdo import encode_with_rdo
from idsecodec.kernels import BACKEND

plane = ImagePlane.from_array(make_rng(5).uniform(0, 255, (64, 64)).round())
encode_with_rdo(plane, 30)  # warm-up
t0 = time.perf_counter()
for _ in range({repeat}):
    encode_with_rdo(plane, 30)
print(BACKEND, (time.perf_counter() - t0) / {repeat})
"""


def time_callable(fn, args_list, repeat: int) -> float:
    """Best-of-3 mean seconds per call over the prepared argument list."""
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeat):
            for args in args_list:
                fn(*args)
        best = min(best, (time.perf_counter() - t0) / (repeat * len(args_list)))
    return best


def bench_kernels(repeat: int) -> list[tuple[str, float, float]]:
    rng = make_rng(42)
    coeff_blocks = [rng.normal(0.0, 40.0, size=256) for _ in range(64)]
    quant_args = [(c, 2.519842099789746) for c in coeff_blocks]
    level_args = [(_kernels_py.quantize_half_away(c, 8.0),) for c in coeff_blocks]
    rows = []
    for name, py_fn, cy_fn, args_list in (
        ("quantize_half_away", _kernels_py.quantize_half_away,
         _kernels.quantize_half_away if _kernels else None, quant_args),
        ("count_block_bits", _kernels_py.count_block_bits,
         _kernels.count_block_bits if _kernels else None, level_args),
    ):
        t_py = time_callable(py_fn, args_list, repeat)
        t_cy = time_callable(cy_fn, args_list, repeat) if cy_fn else float("nan")
        rows.append((name, t_py, t_cy))
    return rows


def bench_encode(repeat: int) -> list[tuple[str, float]]:
    rows = []
    for backend, force in (("cython", "0"), ("python", "1")):
        if backend == "cython" and _kernels is None:
            continue
        env = dict(os.environ, IDSE_PURE_PYTHON=force)
        out = subprocess.run(
            [sys.executable, "-c", _ENCODE_SNIPPET.format(repeat=repeat)],
            env=env, capture_output=True, text=True, check=True,
        ).stdout.split()
        rows.append((out[0], float(out[1])))
    return rows


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=200, help="kernel timing repeats (default 200)")
    parser.add_argument("--encode-repeat", type=int, default=5, help="whole-encode repeats (default 5)")
    args = parser.parse_args(argv)

    if _kernels is None:
        print("compiled backend not available; timing pure Python only\n")

    print(f"{'kernel':<22} {'python':>12} {'cython':>12} {'speedup':>9}")
    for name, t_py, t_cy in bench_kernels(args.repeat):
        ratio = f"{t_py / t_cy:8.1f}x" if np.isfinite(t_cy) else "      n/a"
        cy_txt = f"{t_cy * 1e6:10.2f}us" if np.isfinite(t_cy) else "       n/a"
        print(f"{name:<22} {t_py * 1e6:10.2f}us {cy_txt} {ratio}")

    print(f"\n{'encode 64x64 qp30':<22} {'seconds/frame':>14}")
    for backend, seconds in bench_encode(args.encode_repeat):
        print(f"  backend={backend:<12} {seconds:12.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
