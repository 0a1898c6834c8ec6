"""One-shot generator for the frozen conv_relu_conv oracle weights.

Run from the repository root; rewrites src/idsecodec/data/conv_relu_conv_v1.bin.
The file is committed so the oracle never drifts; rerunning reproduces it
byte-identically.
"""

import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from idsecodec.core import make_rng
from idsecodec.toyfe import write_tensor_file

SEED = 122004
OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "idsecodec" / "data" / "conv_relu_conv_v1.bin"


def main() -> None:
    rng = make_rng(SEED)
    w1 = rng.standard_normal((4, 1, 3, 3)) / 3.0
    w2 = rng.standard_normal((2, 4, 3, 3)) / 6.0
    OUT.parent.mkdir(parents=True, exist_ok=True)
    write_tensor_file(str(OUT), [w1, w2])
    print(f"wrote {OUT} ({OUT.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
