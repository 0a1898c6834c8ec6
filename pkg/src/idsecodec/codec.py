"""Block transforms, quantization, Exp-Golomb entropy coding, bitstream mux/demux.

The codec tiles the padded plane into 16x16 macroblocks.  Each block is coded
with one of 18 candidates: partition in {whole16, split4} and a quantizer
offset dqp in -4..4.  The decoder replays the encoder's reconstruction exactly
(same dequantize + inverse-transform code path), so the closed loop is
bit-exact by construction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

from idsecodec.core import MB_SIZE, SUB_SIZE, BlockGrid, FormatError, ImagePlane, assemble_blocks
from idsecodec.kernels import count_block_bits, quantize_half_away

MAGIC = b"IDS1"
VERSION = 1
QP_MAX = 51
DQP_MIN, DQP_MAX = -4, 4
PARTITIONS = ("whole16", "split4")
N_CANDIDATES = 18
SIDE_INFO_BITS = 5  # 1 partition bit + 4-bit dqp field
METRIC_IDS = {"sse": 0, "idse": 1}
METRIC_NAMES = {v: k for k, v in METRIC_IDS.items()}

_HEADER = struct.Struct("<4sBIIIIBBH")
_N_SUB = (MB_SIZE // SUB_SIZE) ** 2


# ---------------------------------------------------------------------------
# Transform

@lru_cache(maxsize=None)
def _dct_matrix(n: int) -> np.ndarray:
    """Orthonormal type-II DCT analysis matrix; row k is the k-th basis vector."""
    j = np.arange(n)
    t = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * j[None, :] + 1) * j[:, None] / (2 * n))
    t[0] = np.sqrt(1.0 / n)
    t.setflags(write=False)
    return t


@dataclass(frozen=True)
class TransformSpec:
    """Separable orthonormal 2-D DCT of a given block size."""

    size: int

    def __post_init__(self):
        if self.size not in (SUB_SIZE, MB_SIZE):
            raise ValueError(f"transform size must be {SUB_SIZE} or {MB_SIZE}, got {self.size}")

    @property
    def matrix(self) -> np.ndarray:
        return _dct_matrix(self.size)

    def operator(self) -> np.ndarray:
        """Synthesis operator U with x = U @ y on row-major flattened blocks."""
        t = self.matrix
        return np.kron(t.T, t.T)


def dct_forward(block: np.ndarray, spec: TransformSpec) -> np.ndarray:
    block = np.asarray(block, dtype=np.float64)
    if block.shape != (spec.size, spec.size):
        raise ValueError(f"expected {spec.size}x{spec.size} block, got {block.shape}")
    t = spec.matrix
    return t @ block @ t.T


def dct_inverse(coeffs: np.ndarray, spec: TransformSpec) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (spec.size, spec.size):
        raise ValueError(f"expected {spec.size}x{spec.size} coefficients, got {coeffs.shape}")
    t = spec.matrix
    return t.T @ coeffs @ t


# ---------------------------------------------------------------------------
# Quantizer

@dataclass(frozen=True)
class QuantizerSpec:
    """Uniform scalar quantizer with step 2^((qp + dqp - 4)/6)."""

    qp: int
    dqp: int = 0

    def __post_init__(self):
        if not DQP_MIN <= self.dqp <= DQP_MAX:
            raise ValueError(f"dqp must be in [{DQP_MIN}, {DQP_MAX}], got {self.dqp}")

    @property
    def step(self) -> float:
        return 2.0 ** ((self.qp + self.dqp - 4) / 6.0)


def quantize(coeffs: np.ndarray, spec: QuantizerSpec) -> np.ndarray:
    """Integer levels, ties rounded away from zero.  Preserves input shape."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    return quantize_half_away(coeffs.ravel(), spec.step).reshape(coeffs.shape)


def dequantize(levels: np.ndarray, spec: QuantizerSpec) -> np.ndarray:
    return np.asarray(levels, dtype=np.float64) * spec.step


# ---------------------------------------------------------------------------
# Scan order

@lru_cache(maxsize=None)
def zigzag(size: int) -> np.ndarray:
    """Flat indices of the diagonal scan; even diagonals run bottom-left to top-right."""
    if size not in (SUB_SIZE, MB_SIZE):
        raise ValueError(f"scan size must be {SUB_SIZE} or {MB_SIZE}, got {size}")
    order = []
    for d in range(2 * size - 1):
        lo, hi = max(0, d - size + 1), min(d, size - 1)
        rows = range(hi, lo - 1, -1) if d % 2 == 0 else range(lo, hi + 1)
        order.extend(r * size + (d - r) for r in rows)
    idx = np.array(order, dtype=np.intp)
    idx.setflags(write=False)
    return idx


# ---------------------------------------------------------------------------
# Bit-level I/O (MSB-first)

class BitWriter:
    __slots__ = ("_bytes", "_acc", "_nbits")

    def __init__(self):
        self._bytes = bytearray()
        self._acc = 0
        self._nbits = 0

    def write_bits(self, value: int, n: int) -> None:
        if n <= 0 or value < 0 or value >> n:
            raise ValueError(f"value {value} does not fit in {n} bits")
        self._acc = (self._acc << n) | value
        self._nbits += n
        while self._nbits >= 8:
            self._nbits -= 8
            self._bytes.append((self._acc >> self._nbits) & 0xFF)
        self._acc &= (1 << self._nbits) - 1

    def write_ue(self, value: int) -> None:
        if value < 0:
            raise ValueError(f"ue code requires value >= 0, got {value}")
        n = (value + 1).bit_length()
        self.write_bits(value + 1, 2 * n - 1)

    def write_se(self, value: int) -> None:
        self.write_ue(2 * value - 1 if value > 0 else -2 * value)

    @property
    def bit_length(self) -> int:
        return 8 * len(self._bytes) + self._nbits

    def to_bytes(self) -> bytes:
        """Byte string, zero-padded to a byte boundary.  Non-destructive."""
        out = bytes(self._bytes)
        if self._nbits:
            out += bytes([(self._acc << (8 - self._nbits)) & 0xFF])
        return out

    def bits01(self) -> str:
        """The exact bit sequence written so far, as a '0'/'1' string."""
        s = "".join(f"{b:08b}" for b in self._bytes)
        if self._nbits:
            s += format(self._acc, f"0{self._nbits}b")
        return s


class BitReader:
    __slots__ = ("_data", "_nbits", "_pos")

    def __init__(self, data: bytes, nbits: int | None = None):
        self._data = data
        self._nbits = 8 * len(data) if nbits is None else nbits
        self._pos = 0

    @property
    def bits_consumed(self) -> int:
        return self._pos

    @property
    def bits_left(self) -> int:
        return self._nbits - self._pos

    def read_bits(self, n: int) -> int:
        if n < 0 or self._pos + n > self._nbits:
            raise FormatError("bitstream truncated")
        value = 0
        pos = self._pos
        for _ in range(n):
            value = (value << 1) | ((self._data[pos >> 3] >> (7 - (pos & 7))) & 1)
            pos += 1
        self._pos = pos
        return value

    def read_ue(self) -> int:
        zeros = 0
        while self.read_bits(1) == 0:
            zeros += 1
            if zeros > 64:
                raise FormatError("invalid Exp-Golomb prefix")
        if zeros == 0:
            return 0
        return ((1 << zeros) | self.read_bits(zeros)) - 1

    def read_se(self) -> int:
        mapped = self.read_ue()
        return (mapped + 1) // 2 if mapped % 2 else -(mapped // 2)


# ---------------------------------------------------------------------------
# Per-block entropy layer: ue(#nonzero), then [ue(run), se(level)] per
# nonzero coefficient in scan order.

def _write_levels(writer: BitWriter, levels: np.ndarray) -> None:
    nz = np.nonzero(levels)[0]
    writer.write_ue(int(nz.size))
    prev = -1
    for pos in nz:
        writer.write_ue(int(pos) - prev - 1)
        writer.write_se(int(levels[pos]))
        prev = int(pos)


def _read_levels(reader: BitReader, n_coeffs: int) -> np.ndarray:
    n_nz = reader.read_ue()
    if n_nz > n_coeffs:
        raise FormatError(f"nonzero count {n_nz} exceeds block size {n_coeffs}")
    out = np.zeros(n_coeffs, dtype=np.int32)
    pos = -1
    for _ in range(n_nz):
        pos += reader.read_ue() + 1
        if pos >= n_coeffs:
            raise FormatError("coefficient run past block end")
        level = reader.read_se()
        if level == 0:
            raise FormatError("zero level in nonzero coefficient slot")
        out[pos] = level
    return out


def entropy_encode_block(levels: np.ndarray) -> str:
    """Bit string for one zigzag-ordered level vector."""
    w = BitWriter()
    _write_levels(w, np.asarray(levels))
    return w.bits01()


def entropy_decode_block(bits: str, n_coeffs: int) -> np.ndarray:
    """Inverse of entropy_encode_block; the string must be consumed exactly."""
    if bits and set(bits) - {"0", "1"}:
        raise FormatError("bit string must contain only 0 and 1")
    data = bytes(int(bits[i : i + 8].ljust(8, "0"), 2) for i in range(0, len(bits), 8))
    reader = BitReader(data, nbits=len(bits))
    out = _read_levels(reader, n_coeffs)
    if reader.bits_left:
        raise FormatError("trailing bits after block payload")
    return out


# ---------------------------------------------------------------------------
# Candidate enumeration

@dataclass(frozen=True, eq=False)
class CodingCandidate:
    """One (partition, dqp) coding option for a macroblock.

    levels holds zigzag-ordered int32 vectors, one per transform unit (one for
    whole16, sixteen for split4 in raster order).  coeff_error is the
    dequantized-minus-exact coefficient vector, length 256, in natural
    row-major order for whole16 and concatenated per-sub-block row-major
    order for split4 (matching the metric's transform-domain layout).
    bits is the exact emitted size including the 5 side-info bits.
    """

    partition: str
    dqp: int
    levels: tuple[np.ndarray, ...]
    bits: int
    recon: np.ndarray
    pixel_error: np.ndarray
    coeff_error: np.ndarray


def _to_sub(block: np.ndarray) -> np.ndarray:
    """(16,16) -> (16,4,4) sub-blocks in raster order."""
    n = MB_SIZE // SUB_SIZE
    return block.reshape(n, SUB_SIZE, n, SUB_SIZE).swapaxes(1, 2).reshape(_N_SUB, SUB_SIZE, SUB_SIZE)


def _from_sub(subs: np.ndarray) -> np.ndarray:
    n = MB_SIZE // SUB_SIZE
    return subs.reshape(n, n, SUB_SIZE, SUB_SIZE).swapaxes(1, 2).reshape(MB_SIZE, MB_SIZE)


def _coeffs_from_levels(
    partition: str, dqp: int, levels: tuple[np.ndarray, ...], base_qp: int
) -> np.ndarray:
    """Natural-order dequantized coefficient vector (length 256) for a choice."""
    spec = QuantizerSpec(base_qp, dqp)
    if partition == "whole16":
        (lv,) = levels
        out = np.zeros(MB_SIZE * MB_SIZE)
        out[zigzag(MB_SIZE)] = dequantize(lv, spec)
        return out
    arr = dequantize(np.stack(levels), spec)
    nat = np.zeros((_N_SUB, SUB_SIZE * SUB_SIZE))
    nat[:, zigzag(SUB_SIZE)] = arr
    return nat.ravel()


def rebuild_block(partition: str, dqp: int, levels: tuple[np.ndarray, ...], base_qp: int) -> np.ndarray:
    """Reconstructed 16x16 pixels for a coded choice.  Shared by encoder and decoder."""
    if partition not in PARTITIONS:
        raise ValueError(f"unknown partition {partition!r}")
    nat = _coeffs_from_levels(partition, dqp, levels, base_qp)
    if partition == "whole16":
        t = _dct_matrix(MB_SIZE)
        return t.T @ nat.reshape(MB_SIZE, MB_SIZE) @ t
    t = _dct_matrix(SUB_SIZE)
    return _from_sub(t.T @ nat.reshape(_N_SUB, SUB_SIZE, SUB_SIZE) @ t)


def enumerate_candidates(block: np.ndarray, base_qp: int) -> list[CodingCandidate]:
    """All 18 coding options for one macroblock: dqp -4..4, each partition."""
    block = np.asarray(block, dtype=np.float64)
    if block.shape != (MB_SIZE, MB_SIZE):
        raise ValueError(f"expected {MB_SIZE}x{MB_SIZE} block, got {block.shape}")
    t16 = _dct_matrix(MB_SIZE)
    t4 = _dct_matrix(SUB_SIZE)

    y16 = t16 @ block @ t16.T
    y16_nat = y16.ravel()
    y16_zz = y16_nat[zigzag(MB_SIZE)]

    y4 = t4 @ _to_sub(block) @ t4.T
    y4_nat = y4.reshape(-1)
    y4_zz = y4.reshape(_N_SUB, SUB_SIZE * SUB_SIZE)[:, zigzag(SUB_SIZE)]

    out = []
    for dqp in range(DQP_MIN, DQP_MAX + 1):
        spec = QuantizerSpec(base_qp, dqp)
        for partition in PARTITIONS:
            if partition == "whole16":
                levels = (quantize(y16_zz, spec),)
                bits = SIDE_INFO_BITS + count_block_bits(levels[0])
                exact = y16_nat
            else:
                lv = quantize(y4_zz, spec)
                levels = tuple(lv)
                bits = SIDE_INFO_BITS + sum(count_block_bits(row) for row in lv)
                exact = y4_nat
            recon = rebuild_block(partition, dqp, levels, base_qp)
            out.append(
                CodingCandidate(
                    partition=partition,
                    dqp=dqp,
                    levels=levels,
                    bits=bits,
                    recon=recon,
                    pixel_error=recon - block,
                    coeff_error=_coeffs_from_levels(partition, dqp, levels, base_qp) - exact,
                )
            )
    return out


# ---------------------------------------------------------------------------
# Bitstream mux/demux

@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    orig_width: int
    orig_height: int
    base_qp: int
    metric: str

    @property
    def grid(self) -> BlockGrid:
        return BlockGrid(self.width, self.height)

    @property
    def n_blocks(self) -> int:
        return self.grid.n_blocks


class BlockChoice(NamedTuple):
    partition: str
    dqp: int
    levels: tuple[np.ndarray, ...]


def _write_block(writer: BitWriter, partition: str, dqp: int, levels: tuple[np.ndarray, ...]) -> None:
    writer.write_bits(PARTITIONS.index(partition), 1)
    writer.write_bits(dqp & 0xF, 4)  # two's complement in 4 bits
    for lv in levels:
        _write_levels(writer, lv)


def mux(plane: ImagePlane, base_qp: int, metric: str, choices: Sequence[CodingCandidate]) -> bytes:
    """Serialize chosen candidates into an IDS1 byte stream."""
    if metric not in METRIC_IDS:
        raise ValueError(f"unknown metric {metric!r}")
    if not 0 <= base_qp <= QP_MAX:
        raise ValueError(f"base qp must be in [0, {QP_MAX}], got {base_qp}")
    grid = plane.grid
    if len(choices) != grid.n_blocks:
        raise ValueError(f"expected {grid.n_blocks} block choices, got {len(choices)}")
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        plane.width,
        plane.height,
        plane.orig_width,
        plane.orig_height,
        base_qp,
        METRIC_IDS[metric],
        0,
    )
    writer = BitWriter()
    for cand in choices:
        _write_block(writer, cand.partition, cand.dqp, cand.levels)
    return header + writer.to_bytes()


def demux(data: bytes) -> tuple[StreamHeader, list[BlockChoice]]:
    """Parse an IDS1 byte stream back into per-block choices."""
    if len(data) < _HEADER.size:
        raise FormatError("stream shorter than header")
    magic, version, width, height, ow, oh, base_qp, metric_id, _ = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if width <= 0 or height <= 0 or width % MB_SIZE or height % MB_SIZE:
        raise FormatError(f"invalid padded dimensions {width}x{height}")
    if not (0 < ow <= width and 0 < oh <= height):
        raise FormatError(f"original size {ow}x{oh} outside padded plane {width}x{height}")
    if base_qp > QP_MAX:
        raise FormatError(f"base qp {base_qp} out of range")
    if metric_id not in METRIC_NAMES:
        raise FormatError(f"unknown metric id {metric_id}")
    header = StreamHeader(width, height, ow, oh, base_qp, METRIC_NAMES[metric_id])

    reader = BitReader(data[_HEADER.size :])
    choices = []
    for _ in range(header.n_blocks):
        partition = PARTITIONS[reader.read_bits(1)]
        raw = reader.read_bits(4)
        dqp = raw - 16 if raw >= 8 else raw
        if not DQP_MIN <= dqp <= DQP_MAX:
            raise FormatError(f"dqp {dqp} out of range")
        n_units = 1 if partition == "whole16" else _N_SUB
        n_coeffs = MB_SIZE * MB_SIZE if partition == "whole16" else SUB_SIZE * SUB_SIZE
        levels = tuple(_read_levels(reader, n_coeffs) for _ in range(n_units))
        choices.append(BlockChoice(partition, dqp, levels))
    if reader.bits_left >= 8:
        raise FormatError("trailing data after last block")
    if reader.bits_left and reader.read_bits(reader.bits_left) != 0:
        raise FormatError("nonzero padding bits")
    return header, choices


def decode_stream(data: bytes) -> tuple[ImagePlane, StreamHeader]:
    """Decode an IDS1 stream to the padded reconstruction plane."""
    header, choices = demux(data)
    blocks = np.stack(
        [rebuild_block(c.partition, c.dqp, c.levels, header.base_qp) for c in choices]
    )
    pixels = assemble_blocks(blocks, header.grid)
    return ImagePlane(pixels, header.orig_width, header.orig_height), header
