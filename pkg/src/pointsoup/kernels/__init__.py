"""Kernel backend selection.

The compiled extension is used when available; set POINTSOUP_NO_EXT=1
to force the pure-Python fallback. Both expose the same names and are
required to produce identical neighbor indices and identical bytes.
"""

import os

if os.environ.get("POINTSOUP_NO_EXT", "0") == "1":
    from pointsoup.kernels import _fallback as _impl
else:
    try:
        from pointsoup.kernels import _native as _impl  # type: ignore[attr-defined]
    except ImportError:
        from pointsoup.kernels import _fallback as _impl

BACKEND = _impl.BACKEND
TOTAL = _impl.TOTAL
KDTree = _impl.KDTree
farthest_points = _impl.farthest_points
self_knn_batch = _impl.self_knn_batch
encode_symbols = _impl.encode_symbols
decode_symbols = _impl.decode_symbols
encode_bits_adaptive = _impl.encode_bits_adaptive
decode_bits_adaptive = _impl.decode_bits_adaptive

__all__ = [
    "BACKEND",
    "TOTAL",
    "KDTree",
    "farthest_points",
    "self_knn_batch",
    "encode_symbols",
    "decode_symbols",
    "encode_bits_adaptive",
    "decode_bits_adaptive",
]
