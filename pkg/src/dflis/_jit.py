"""Numba switch.

Set ``DFLIS_DISABLE_NUMBA=1`` before import to force the vectorized numpy
implementations of every kernel in :mod:`dflis.kernels`.
"""

import os

NUMBA_DISABLED = os.environ.get("DFLIS_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

USE_NUMBA = _numba is not None and not NUMBA_DISABLED


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it untouched."""
    if _numba is None:
        return fn
    return _numba.njit(cache=True)(fn)
