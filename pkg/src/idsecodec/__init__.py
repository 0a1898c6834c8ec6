"""Block-transform image codec with feature-preserving (IDSE) rate-distortion optimization."""

__version__ = "0.1.0"

from idsecodec.core import (
    CodecError,
    ConvergenceError,
    FormatError,
    GridMismatchError,
    ImagePlane,
    BlockGrid,
    load_pgm,
    make_rng,
)
from idsecodec.sketch import SketchedJacobian, draw_sketch, read_sketch, write_sketch

__all__ = [
    "BlockGrid",
    "CodecError",
    "ConvergenceError",
    "FormatError",
    "GridMismatchError",
    "ImagePlane",
    "SketchedJacobian",
    "__version__",
    "draw_sketch",
    "load_pgm",
    "make_rng",
    "read_sketch",
    "write_sketch",
]
