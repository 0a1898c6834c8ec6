"""Shared domain types: image planes, the macroblock grid, PGM I/O, seeded RNG."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MB_SIZE = 16
SUB_SIZE = 4


class CodecError(Exception):
    """Base class for all codec failures."""


class FormatError(CodecError):
    """Malformed file, header, or bitstream."""


class GridMismatchError(FormatError):
    """Sketch or stream was produced for a different pixel grid."""


class ConvergenceError(CodecError):
    """Iterative solver exhausted its iteration budget."""

    def __init__(self, message: str, last_estimate=None):
        super().__init__(message)
        self.last_estimate = last_estimate


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 stream; same outputs for the same seed on every platform."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def _pad_to_multiple(n: int, m: int) -> int:
    return -(-n // m) * m


@dataclass(frozen=True, eq=False)
class ImagePlane:
    """Single-channel raster, padded to a multiple of 16 on each side.

    pixels is float64, shape (height, width).  orig_width/orig_height keep the
    pre-padding size so decoded output can be cropped back.
    """

    pixels: np.ndarray
    orig_width: int
    orig_height: int

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ValueError(f"pixels must be 2-D, got shape {self.pixels.shape}")
        h, w = self.pixels.shape
        if h <= 0 or w <= 0 or h % MB_SIZE or w % MB_SIZE:
            raise ValueError(
                f"plane must have positive dimensions divisible by {MB_SIZE}, got {w}x{h}"
            )
        if not (0 < self.orig_width <= w and 0 < self.orig_height <= h):
            raise ValueError("original size must be positive and fit inside the padded plane")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.pixels.size

    @property
    def grid(self) -> BlockGrid:
        return BlockGrid(self.width, self.height)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> ImagePlane:
        """Wrap a 2-D array, padding to the macroblock grid by edge replication."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"expected a non-empty 2-D array, got shape {arr.shape}")
        h, w = arr.shape
        padded = np.pad(
            arr,
            ((0, _pad_to_multiple(h, MB_SIZE) - h), (0, _pad_to_multiple(w, MB_SIZE) - w)),
            mode="edge",
        )
        return cls(padded, orig_width=w, orig_height=h)

    def cropped(self) -> np.ndarray:
        """Pixels with the padding removed."""
        return self.pixels[: self.orig_height, : self.orig_width]


@dataclass(frozen=True)
class BlockGrid:
    """Raster-order tiling of a padded plane into 16x16 macroblocks."""

    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.width % MB_SIZE or self.height % MB_SIZE:
            raise ValueError(
                f"grid must have positive dimensions divisible by {MB_SIZE}, "
                f"got {self.width}x{self.height}"
            )

    @property
    def blocks_x(self) -> int:
        return self.width // MB_SIZE

    @property
    def blocks_y(self) -> int:
        return self.height // MB_SIZE

    @property
    def n_blocks(self) -> int:
        return self.blocks_x * self.blocks_y

    def block_origin(self, index: int) -> tuple[int, int]:
        """Top-left (row, col) pixel of block `index` in raster order."""
        if not 0 <= index < self.n_blocks:
            raise IndexError(f"block index {index} out of range [0, {self.n_blocks})")
        by, bx = divmod(index, self.blocks_x)
        return by * MB_SIZE, bx * MB_SIZE

    def block_pixel_indices(self, index: int) -> np.ndarray:
        """Flat raster indices of the 256 pixels of block `index`, row-major."""
        r0, c0 = self.block_origin(index)
        rows = np.arange(r0, r0 + MB_SIZE)[:, None] * self.width
        cols = np.arange(c0, c0 + MB_SIZE)[None, :]
        return (rows + cols).ravel()

    def block_view(self, pixels: np.ndarray, index: int) -> np.ndarray:
        """16x16 view of block `index` inside a (height, width) array."""
        if pixels.shape != (self.height, self.width):
            raise ValueError(f"array shape {pixels.shape} does not match grid")
        r0, c0 = self.block_origin(index)
        return pixels[r0 : r0 + MB_SIZE, c0 : c0 + MB_SIZE]


def split_blocks(plane: ImagePlane) -> np.ndarray:
    """All macroblocks of a plane as an (n_blocks, 16, 16) array, raster order."""
    g = plane.grid
    x = plane.pixels.reshape(g.blocks_y, MB_SIZE, g.blocks_x, MB_SIZE)
    return x.swapaxes(1, 2).reshape(g.n_blocks, MB_SIZE, MB_SIZE)


def assemble_blocks(blocks: np.ndarray, grid: BlockGrid) -> np.ndarray:
    """Inverse of split_blocks: (n_blocks, 16, 16) back to (height, width)."""
    if blocks.shape != (grid.n_blocks, MB_SIZE, MB_SIZE):
        raise ValueError(f"expected {(grid.n_blocks, MB_SIZE, MB_SIZE)}, got {blocks.shape}")
    x = blocks.reshape(grid.blocks_y, grid.blocks_x, MB_SIZE, MB_SIZE)
    return x.swapaxes(1, 2).reshape(grid.height, grid.width).copy()


# ---------------------------------------------------------------------------
# PGM I/O.  Binary P5 only; 8-bit for images, 16-bit big-endian for maps.

def _read_pgm_header(data: bytes, path: str) -> tuple[int, int, int, int]:
    """Parse 'P5 <width> <height> <maxval>' allowing comments; return fields + payload offset."""
    if data[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (missing P5 magic)")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise FormatError(f"{path}: bad PGM header token {token!r}")
        fields.append(int(token))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError(f"{path}: PGM header not terminated by whitespace")
    pos += 1  # exactly one whitespace byte before the payload
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: non-positive PGM dimensions {width}x{height}")
    return width, height, maxval, pos


def read_pgm(path: str) -> np.ndarray:
    """Load an 8-bit binary PGM as a uint8 array of shape (height, width)."""
    with open(path, "rb") as fh:
        data = fh.read()
    width, height, maxval, pos = _read_pgm_header(data, path)
    if maxval != 255:
        raise FormatError(f"{path}: unsupported PGM maxval {maxval}, expected 255")
    payload = data[pos : pos + width * height]
    if len(payload) != width * height:
        raise FormatError(f"{path}: PGM payload truncated")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def load_pgm(path: str) -> ImagePlane:
    """Load an 8-bit PGM and pad it to the macroblock grid."""
    return ImagePlane.from_array(read_pgm(path).astype(np.float64))


def write_pgm(path: str, image: np.ndarray) -> None:
    """Write a 2-D array as an 8-bit binary PGM, clipping and rounding to [0, 255]."""
    if image.ndim != 2 or image.size == 0:
        raise ValueError(f"expected a non-empty 2-D array, got shape {image.shape}")
    out = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    h, w = out.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(out.tobytes())


def write_pgm16(path: str, image: np.ndarray) -> None:
    """Write a 2-D uint16 array as a 16-bit big-endian binary PGM (maxval 65535)."""
    if image.ndim != 2 or image.size == 0:
        raise ValueError(f"expected a non-empty 2-D array, got shape {image.shape}")
    out = np.asarray(image, dtype=np.uint16)
    h, w = out.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(out.astype(">u2").tobytes())


def read_pgm16(path: str) -> np.ndarray:
    """Load a 16-bit big-endian binary PGM as a uint16 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    width, height, maxval, pos = _read_pgm_header(data, path)
    if maxval != 65535:
        raise FormatError(f"{path}: unsupported PGM maxval {maxval}, expected 65535")
    payload = data[pos : pos + 2 * width * height]
    if len(payload) != 2 * width * height:
        raise FormatError(f"{path}: PGM payload truncated")
    return np.frombuffer(payload, dtype=">u2").reshape(height, width).astype(np.uint16)
