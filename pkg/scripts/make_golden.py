"""Regenerate the golden bitstream fixtures used by the codec stability tests.

The input image is a fully deterministic synthetic pattern (gradient +
checkerboard + disk) so the fixture does not depend on any PRNG stream; the
IDSE arm additionally uses a seeded identity-extractor sketch.  Run from the
repository root:

    python3 scripts/make_golden.py
"""

from __future__ import annotations

import hashlib
import os

import numpy as np

from idsecodec.core import ImagePlane
from idsecodec.rdo import MetricConfig, encode_with_rdo
from idsecodec.sketch import draw_sketch, sketch_linear_jacobian
from idsecodec.toyfe import make_extractor

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "tests", "data")
QP = 30
SKETCH_SEED = 99
SKETCH_ROWS = 8


def golden_plane() -> ImagePlane:
    yy, xx = np.meshgrid(np.arange(48), np.arange(48), indexing="ij")
    img = (3.0 * yy + 2.0 * xx) % 256
    img += 40.0 * (((yy // 8) + (xx // 8)) % 2)
    img += np.where((yy - 24) ** 2 + (xx - 24) ** 2 <= 100, 30.0, 0.0)
    return ImagePlane.from_array(np.clip(img, 0.0, 255.0))


def main() -> None:
    os.makedirs(OUT_DIR, exist_ok=True)
    plane = golden_plane()

    stream_sse, _, _ = encode_with_rdo(plane, QP, MetricConfig(kind="sse"))
    fe = make_extractor("identity", plane.width, plane.height)
    J = sketch_linear_jacobian(fe, plane, draw_sketch(SKETCH_ROWS, fe.output_dim, SKETCH_SEED))
    stream_idse, _, _ = encode_with_rdo(plane, QP, MetricConfig(kind="idse", alpha=1.0), J=J)

    for name, data in (("golden_sse_qp30.bin", stream_sse), ("golden_idse_qp30.bin", stream_idse)):
        path = os.path.join(OUT_DIR, name)
        with open(path, "wb") as fh:
            fh.write(data)
        print(f"{name}: {len(data)} bytes sha256={hashlib.sha256(data).hexdigest()}")


if __name__ == "__main__":
    main()
