"""Kernel backend selection.

Imports the compiled extension when available, otherwise the pure-Python
fallback.  Set IDSE_PURE_PYTHON=1 to force the fallback (used by the
equivalence tests and the benchmark).
"""

from __future__ import annotations

import os

if os.environ.get("IDSE_PURE_PYTHON", "") not in ("", "0"):
    from idsecodec import _kernels_py as _impl
else:
    try:
        from idsecodec import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from idsecodec import _kernels_py as _impl

BACKEND = _impl.BACKEND
count_block_bits = _impl.count_block_bits
quantize_half_away = _impl.quantize_half_away
