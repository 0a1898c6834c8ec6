"""Sketched-Jacobian extraction from DNN backbones via autograd, and SKJ1 writing.

Row i of the sketch is the gradient of q_i = s_i . f(x) with respect to the
padded input pixels, where s_i is a Rademacher row scaled by 1/sqrt(n_s) and
f runs the backbone up to its tap point with preprocessing inside.
"""

from __future__ import annotations

import math
import struct

import numpy as np
import torch
from PIL import Image

from pysketch.backbones import BackboneSpec, load_model, resolve_tap

GRID = 16  # macroblock size of the coding grid the sketch columns live on
MAGIC = b"SKJ1"
VERSION = 1
_FILE_HEADER = struct.Struct("<4sBIIIQH")
_SEED_MAX = 2**64  # the file stores the seed as an unsigned 64-bit field


class SketchMemoryError(RuntimeError):
    """Backward passes exhausted memory; retry with a smaller row count."""

    def __init__(self, n_s: int):
        super().__init__(
            f"ran out of memory while extracting {n_s} sketch rows; retry with a "
            f"smaller --ns (each row costs one backward pass and one pixel-grid "
            f"sized buffer)"
        )


class _TapHit(Exception):
    """Internal: carries the tap activation out of a short-circuited forward."""

    def __init__(self, value: torch.Tensor):
        super().__init__("tap hit")
        self.value = value


def load_image_gray(path: str) -> np.ndarray:
    """Image file as float64 grayscale intensities in 0..255."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64)


def pad_to_grid(pixels: np.ndarray) -> np.ndarray:
    """Edge-replicate on the bottom and right until both sides divide the grid."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2 or pixels.size == 0:
        raise ValueError(f"expected a non-empty 2-D array, got shape {pixels.shape}")
    h, w = pixels.shape
    return np.pad(pixels, ((0, (-h) % GRID), (0, (-w) % GRID)), mode="edge")


def rademacher_matrix(n_s: int, n_f: int, seed: int) -> np.ndarray:
    """n_s x n_f fair-coin sign matrix scaled by 1/sqrt(n_s)."""
    if n_s < 1:
        raise ValueError(f"n_s must be >= 1, got {n_s}")
    if n_f < 1:
        raise ValueError(f"n_f must be >= 1, got {n_f}")
    rng = np.random.default_rng(seed)
    signs = 2.0 * rng.integers(0, 2, size=(n_s, n_f)) - 1.0
    return signs / math.sqrt(n_s)


def feature_vector(model: torch.nn.Module, spec: BackboneSpec, x: torch.Tensor) -> torch.Tensor:
    """f(x): preprocessing plus the forward pass up to the tap, flattened.

    x is (1, 1, H, W) intensities in 0..255.  Scaling to unit range, channel
    replication, optional resize, and optional normalization happen here, so
    gradients of the result are w.r.t. the coding-resolution pixels.
    """
    z = x / 255.0
    z = z.expand(-1, spec.channels, -1, -1)
    if spec.resize is not None:
        z = torch.nn.functional.interpolate(
            z, size=spec.resize, mode="bilinear", align_corners=False, antialias=True
        )
    if spec.normalize is not None:
        mean, std = spec.normalize
        z = (z - torch.tensor(mean, dtype=z.dtype).reshape(1, -1, 1, 1)) / torch.tensor(
            std, dtype=z.dtype
        ).reshape(1, -1, 1, 1)
    tap = resolve_tap(model, spec.tap)
    handle = tap.register_forward_hook(lambda mod, inp, out: _raise_tap(out))
    try:
        model(z)
        raise ValueError(f"tap module {spec.tap!r} never ran during the forward pass")
    except _TapHit as hit:
        return hit.value.reshape(-1)
    finally:
        handle.remove()


def _raise_tap(out: torch.Tensor):
    raise _TapHit(out)


def sketch_rows(
    model: torch.nn.Module, spec: BackboneSpec, padded: np.ndarray, n_s: int, seed: int
) -> tuple[np.ndarray, int]:
    """(rows, n_f): one backward pass per sketched feature q_i, rows float32.

    Rows come out in raster order over the padded (height, width) grid.
    """
    height, width = padded.shape
    if height % GRID or width % GRID:
        raise ValueError(f"padded grid {width}x{height} is not a multiple of {GRID}")
    x = torch.tensor(padded, dtype=torch.float32).reshape(1, 1, height, width)
    x.requires_grad_(True)
    try:
        feats = feature_vector(model, spec, x)
        signs = rademacher_matrix(n_s, feats.numel(), seed)
        rows = np.empty((n_s, height * width), dtype=np.float32)
        for i in range(n_s):
            q_i = (torch.from_numpy(signs[i].astype(np.float32)) * feats).sum()
            (grad,) = torch.autograd.grad(q_i, x, retain_graph=i + 1 < n_s)
            rows[i] = grad.reshape(-1).numpy()
    except MemoryError as exc:
        raise SketchMemoryError(n_s) from exc
    except RuntimeError as exc:
        if "out of memory" in str(exc).lower():
            raise SketchMemoryError(n_s) from exc
        raise
    return rows, feats.numel()


def write_skj1(
    path: str, entries: np.ndarray, width: int, height: int, seed: int, tag: str = ""
) -> None:
    """Write sketch rows in the SKJ1 interchange layout (float32, no compression)."""
    entries = np.asarray(entries)
    if entries.ndim != 2:
        raise ValueError(f"entries must be 2-D, got shape {entries.shape}")
    if entries.shape[0] < 1:
        raise ValueError("a sketch needs at least one row")
    if width <= 0 or height <= 0 or width % GRID or height % GRID:
        raise ValueError(
            f"grid must have positive dimensions divisible by {GRID}, got {width}x{height}"
        )
    if entries.shape[1] != width * height:
        raise ValueError(
            f"entries have {entries.shape[1]} columns, grid {width}x{height} "
            f"needs {width * height}"
        )
    if not 0 <= seed < _SEED_MAX:
        raise ValueError(f"seed must fit an unsigned 64-bit field, got {seed}")
    raw_tag = tag.encode("utf-8")
    if len(raw_tag) > 0xFFFF:
        raise ValueError("source tag too long for format")
    with open(path, "wb") as fh:
        fh.write(
            _FILE_HEADER.pack(MAGIC, VERSION, width, height, entries.shape[0], seed, len(raw_tag))
        )
        fh.write(raw_tag)
        fh.write(np.ascontiguousarray(entries, dtype="<f4").tobytes())


def sketch_dnn(
    image_path: str, spec: BackboneSpec, n_s: int, seed: int, out_path: str
) -> dict:
    """Sketch a backbone's Jacobian at an image and write the SKJ1 file.

    Returns a summary dict: width, height, n_s, n_f, tag.
    """
    if n_s < 1:
        raise ValueError(f"n_s must be >= 1, got {n_s}")
    if not 0 <= seed < _SEED_MAX:
        raise ValueError(f"seed must fit an unsigned 64-bit field, got {seed}")
    model = load_model(spec)
    padded = pad_to_grid(load_image_gray(image_path))
    rows, n_f = sketch_rows(model, spec, padded, n_s, seed)
    height, width = padded.shape
    tag = f"dnn:{spec.model}:{spec.tap}"
    write_skj1(out_path, rows, width, height, seed, tag)
    return {"width": width, "height": height, "n_s": n_s, "n_f": n_f, "tag": tag}
