"""Sketched-Jacobian (SKJ1) exporter for pretrained vision backbones via autograd."""

__version__ = "0.1.0"

from pysketch.backbones import (
    BACKBONE_NAMES,
    BackboneSpec,
    ModelLoadError,
    TinyConv,
    load_model,
    make_spec,
    resolve_tap,
)
from pysketch.sketch import (
    SketchMemoryError,
    feature_vector,
    load_image_gray,
    pad_to_grid,
    rademacher_matrix,
    sketch_dnn,
    sketch_rows,
    write_skj1,
)
from pysketch.validate import SketchReport, validate_sketch

__all__ = [
    "BACKBONE_NAMES",
    "BackboneSpec",
    "ModelLoadError",
    "SketchMemoryError",
    "SketchReport",
    "TinyConv",
    "__version__",
    "feature_vector",
    "load_image_gray",
    "load_model",
    "make_spec",
    "pad_to_grid",
    "rademacher_matrix",
    "resolve_tap",
    "sketch_dnn",
    "sketch_rows",
    "validate_sketch",
    "write_skj1",
]
