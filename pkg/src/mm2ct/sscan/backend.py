"""Kernel backend selection.

The Cython extension is used when it imports and ``MM2CT_PURE_PYTHON`` is not
set; otherwise the numpy kernels in :mod:`._scan_py` serve every call.
"""
from __future__ import annotations

import os

import numpy as np

from . import _scan_py

try:
    if os.environ.get("MM2CT_PURE_PYTHON") == "1":
        raise ImportError("pure-Python backend forced")
    from . import _scan_cy
except ImportError:
    _scan_cy = None

HAVE_EXTENSION = _scan_cy is not None
BACKEND = "cython" if HAVE_EXTENSION else "numpy"

# chunk used by the numpy backend when the caller asks for the fastest scan
DEFAULT_CHUNK = 64


def _prep(*arrays):
    dtype = arrays[0].dtype
    return [np.ascontiguousarray(a, dtype=dtype) for a in arrays]


def forward(u, delta, A, Bm, Cm, chunk=None, use_extension=None):
    """Dispatch the fused forward kernel; returns ``(y, h)``.

    ``chunk=None`` is the sequential recurrence (compiled when available);
    an integer selects the numpy chunked scan.
    """
    use_ext = HAVE_EXTENSION if use_extension is None else use_extension
    if use_ext and not HAVE_EXTENSION:
        raise RuntimeError("compiled scan extension is not available")
    if chunk is None and use_ext:
        return _scan_cy.ssm_forward(*_prep(u, delta, A, Bm, Cm))
    return _scan_py.ssm_forward(u, delta, A, Bm, Cm, chunk=chunk)


def backward(u, delta, A, Bm, Cm, h, dy, chunk=None, use_extension=None):
    use_ext = HAVE_EXTENSION if use_extension is None else use_extension
    if use_ext and not HAVE_EXTENSION:
        raise RuntimeError("compiled scan extension is not available")
    if chunk is None and use_ext:
        return _scan_cy.ssm_backward(*_prep(u, delta, A, Bm, Cm, h, dy))
    return _scan_py.ssm_backward(u, delta, A, Bm, Cm, h, dy, chunk=chunk)


def fastest_chunk():
    """Chunk argument giving the quickest training-path scan on this install."""
    return None if HAVE_EXTENSION else DEFAULT_CHUNK
