"""Pure-Python fallback for the hot quantize/bit-count kernels.

Must stay bit-for-bit interchangeable with the compiled versions in
_kernels.pyx: same rounding rule, same code lengths, no shortcuts.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def _ue_len(value: int) -> int:
    # Exp-Golomb: k zeros, then (value+1) in k+1 bits, k = bitlen(value+1)-1.
    return 2 * int(value + 1).bit_length() - 1


def quantize_half_away(coeffs: np.ndarray, step: float) -> np.ndarray:
    """Uniform scalar quantizer, ties rounded away from zero.  Returns int32 levels."""
    y = np.asarray(coeffs, dtype=np.float64)
    q = np.floor(np.abs(y) / step + 0.5)
    return (np.sign(y) * q).astype(np.int32)


def count_block_bits(levels: np.ndarray) -> int:
    """Exp-Golomb payload length in bits for one zigzag-ordered level vector.

    Layout: ue(#nonzero), then per nonzero coefficient in scan order
    ue(zero run before it) followed by se(level).
    """
    levels = np.asarray(levels)
    nz = np.nonzero(levels)[0]
    bits = _ue_len(nz.size)
    prev = -1
    for pos in nz:
        level = int(levels[pos])
        mapped = 2 * level - 1 if level > 0 else -2 * level
        bits += _ue_len(int(pos) - prev - 1) + _ue_len(mapped)
        prev = int(pos)
    return bits
