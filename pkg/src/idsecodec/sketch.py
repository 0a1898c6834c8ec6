"""Rademacher sketches, JL sizing, sketched Jacobians, importance maps, SKJ1 I/O."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from idsecodec.core import (
    MB_SIZE,
    BlockGrid,
    ConvergenceError,
    FormatError,
    GridMismatchError,
    make_rng,
    write_pgm16,
)

MAGIC = b"SKJ1"
VERSION = 1
MAX_SKETCH_ROWS = 64  # dense-storage guard for drawn sketches
_POWER_SEED = 0x5EED
_FILE_HEADER = struct.Struct("<4sBIIIQH")


def jl_dimension(n_r: int, epsilon: float, c_jl: float = 1.0) -> int:
    """Sketch rows needed to separate n_r candidates at tolerance epsilon.

    ceil(c_jl * ln(n_r + 1) / epsilon^2), clamped to at least 1.  Advisory:
    the codec default n_s = 8 deliberately undercuts it.
    """
    if n_r < 1:
        raise ValueError(f"candidate count must be >= 1, got {n_r}")
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    if c_jl <= 0.0:
        raise ValueError(f"c_jl must be positive, got {c_jl}")
    return max(1, math.ceil(c_jl * math.log(n_r + 1) / epsilon**2))


@dataclass(frozen=True, eq=False)
class SketchMatrix:
    """Dense Rademacher sketch: entries +-1/sqrt(n_s), i.i.d. fair coin."""

    entries: np.ndarray
    seed: int

    @property
    def n_s(self) -> int:
        return self.entries.shape[0]

    @property
    def n_f(self) -> int:
        return self.entries.shape[1]


def draw_sketch(n_s: int, n_f: int, seed: int) -> SketchMatrix:
    """Draw a fresh sketch matrix; deterministic given the seed."""
    if not 1 <= n_s <= MAX_SKETCH_ROWS:
        raise ValueError(f"n_s must be in [1, {MAX_SKETCH_ROWS}], got {n_s}")
    if n_f < 1:
        raise ValueError(f"n_f must be >= 1, got {n_f}")
    rng = make_rng(seed)
    signs = 2.0 * rng.integers(0, 2, size=(n_s, n_f)) - 1.0
    return SketchMatrix(entries=signs / math.sqrt(n_s), seed=seed)


@dataclass(frozen=True, eq=False)
class SketchedJacobian:
    """n_s x n_p matrix J_s = S J_f, tied to the padded pixel grid it was computed on."""

    entries: np.ndarray
    width: int
    height: int
    seed: int
    source_tag: str = ""

    def __post_init__(self):
        if self.entries.ndim != 2:
            raise ValueError(f"entries must be 2-D, got shape {self.entries.shape}")
        if self.entries.shape[0] < 1:
            raise ValueError("sketched Jacobian needs at least one row")
        if self.width <= 0 or self.height <= 0 or self.width % MB_SIZE or self.height % MB_SIZE:
            raise ValueError(
                f"grid must have positive dimensions divisible by {MB_SIZE}, "
                f"got {self.width}x{self.height}"
            )
        if self.entries.shape[1] != self.width * self.height:
            raise ValueError(
                f"entries have {self.entries.shape[1]} columns, "
                f"grid {self.width}x{self.height} needs {self.width * self.height}"
            )

    @property
    def n_s(self) -> int:
        return self.entries.shape[0]

    @property
    def n_p(self) -> int:
        return self.entries.shape[1]

    @property
    def grid(self) -> BlockGrid:
        return BlockGrid(self.width, self.height)


def sketch_linear_jacobian(fe, x, S: SketchMatrix) -> SketchedJacobian:
    """J_s = S J_f(x) by exact vector-Jacobian products against the extractor.

    Row i is S[i] @ J_f(x), the gradient of the i-th sketched feature.
    """
    if S.n_f != fe.output_dim:
        raise ValueError(
            f"sketch has {S.n_f} columns but extractor produces {fe.output_dim} features"
        )
    pixels = x.pixels if hasattr(x, "pixels") else np.asarray(x, dtype=np.float64)
    if pixels.shape != (fe.height, fe.width):
        raise ValueError(
            f"image shape {pixels.shape} does not match extractor grid "
            f"{fe.height}x{fe.width}"
        )
    rows = fe.vjp_multi(pixels, S.entries)
    return SketchedJacobian(
        entries=rows,
        width=fe.width,
        height=fe.height,
        seed=S.seed,
        source_tag=f"toy:{fe.name}",
    )


def block_slice(J: SketchedJacobian, grid: BlockGrid, i: int) -> np.ndarray:
    """Columns of J for macroblock i, row-major within the block (n_s x 256)."""
    if (grid.width, grid.height) != (J.width, J.height):
        raise GridMismatchError(
            f"grid {grid.width}x{grid.height} does not match sketch grid {J.width}x{J.height}"
        )
    return J.entries[:, grid.block_pixel_indices(i)]


def importance_map(J: SketchedJacobian) -> np.ndarray:
    """Per-pixel squared column norms (raster order, length n_p)."""
    return np.einsum("ij,ij->j", J.entries, J.entries)


def write_importance_pgm(path: str, J: SketchedJacobian) -> None:
    """Export the importance map as a max-normalized 16-bit big-endian PGM."""
    m = importance_map(J).reshape(J.height, J.width)
    peak = m.max()
    if peak > 0:
        m = m / peak
    write_pgm16(path, np.rint(m * 65535.0).astype(np.uint16))


def spectral_norm_sq(J: SketchedJacobian, tol: float = 1e-6, max_iter: int = 1000) -> float:
    """Largest squared singular value via power iteration on the small Gram side.

    Deterministic seeded start; raises on all-zero input, and raises a
    convergence error carrying the last estimate if max_iter is exhausted.
    """
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    a = J.entries
    gram = a @ a.T if a.shape[0] <= a.shape[1] else a.T @ a
    if not gram.any():
        raise ValueError("spectral norm of an all-zero matrix is undefined here")
    v = make_rng(_POWER_SEED).standard_normal(gram.shape[0])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        w = gram @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # start vector landed in the null space; restart deterministically shifted
            v = make_rng(_POWER_SEED + 1).standard_normal(gram.shape[0])
            v /= np.linalg.norm(v)
            continue
        new_estimate = float(v @ w)
        v = w / norm
        if abs(new_estimate - estimate) <= tol * abs(new_estimate):
            return new_estimate
        estimate = new_estimate
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations",
        last_estimate=estimate,
    )


def frobenius_sq_per_block(J: SketchedJacobian, grid: BlockGrid) -> np.ndarray:
    """Squared Frobenius norm of each block slice; sums to ||J||_F^2."""
    per_pixel = importance_map(J).reshape(grid.blocks_y, MB_SIZE, grid.blocks_x, MB_SIZE)
    return per_pixel.sum(axis=(1, 3)).ravel()


# ---------------------------------------------------------------------------
# SKJ1 file format

def write_sketch(path: str, J: SketchedJacobian) -> None:
    tag = J.source_tag.encode("utf-8")
    if len(tag) > 0xFFFF:
        raise ValueError("source tag too long for format")
    with open(path, "wb") as fh:
        fh.write(_FILE_HEADER.pack(MAGIC, VERSION, J.width, J.height, J.n_s, J.seed, len(tag)))
        fh.write(tag)
        fh.write(np.ascontiguousarray(J.entries, dtype="<f4").tobytes())


def read_sketch(path: str) -> SketchedJacobian:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _FILE_HEADER.size:
        raise FormatError(f"{path}: file shorter than header")
    magic, version, width, height, n_s, seed, tag_len = _FILE_HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if width <= 0 or height <= 0 or width % MB_SIZE or height % MB_SIZE:
        raise FormatError(f"{path}: invalid grid {width}x{height}")
    if n_s < 1:
        raise FormatError(f"{path}: invalid row count {n_s}")
    pos = _FILE_HEADER.size
    if len(data) < pos + tag_len:
        raise FormatError(f"{path}: source tag truncated")
    try:
        tag = data[pos : pos + tag_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: source tag is not valid UTF-8") from exc
    pos += tag_len
    expected = n_s * width * height * 4
    if len(data) - pos != expected:
        raise FormatError(
            f"{path}: payload is {len(data) - pos} bytes, header implies {expected}"
        )
    entries = (
        np.frombuffer(data, dtype="<f4", count=n_s * width * height, offset=pos)
        .astype(np.float64)
        .reshape(n_s, width * height)
    )
    return SketchedJacobian(
        entries=entries, width=width, height=height, seed=seed, source_tag=tag
    )
