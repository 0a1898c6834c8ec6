# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled quantize/bit-count kernels.

Bit-for-bit equivalent to _kernels_py; the RDO inner loop calls these once
per candidate per block.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, floor

cnp.import_array()

BACKEND = "cython"


cdef inline int _ue_len(long value) nogil:
    cdef long v = value + 1
    cdef int nbits = 0
    while v:
        nbits += 1
        v >>= 1
    return 2 * nbits - 1


def quantize_half_away(coeffs, double step):
    """Uniform scalar quantizer, ties rounded away from zero.  Returns int32 levels."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef Py_ssize_t n = y.shape[0]
    cdef cnp.ndarray[cnp.int32_t, ndim=1] out = np.empty(n, dtype=np.int32)
    cdef Py_ssize_t i
    cdef double q
    for i in range(n):
        q = floor(fabs(y[i]) / step + 0.5)
        out[i] = <cnp.int32_t>(q if y[i] > 0 else (-q if y[i] < 0 else 0))
    return out


def count_block_bits(levels):
    """Exp-Golomb payload length in bits for one zigzag-ordered level vector.

    Layout: ue(#nonzero), then per nonzero coefficient in scan order
    ue(zero run before it) followed by se(level).
    """
    cdef cnp.ndarray[cnp.int32_t, ndim=1] lv = np.ascontiguousarray(levels, dtype=np.int32)
    cdef Py_ssize_t n = lv.shape[0]
    cdef Py_ssize_t i
    cdef long bits = 0, n_nz = 0, prev = -1, level, mapped
    for i in range(n):
        if lv[i] != 0:
            n_nz += 1
    bits = _ue_len(n_nz)
    for i in range(n):
        level = lv[i]
        if level != 0:
            mapped = 2 * level - 1 if level > 0 else -2 * level
            bits += _ue_len(i - prev - 1) + _ue_len(mapped)
            prev = i
    return bits
