"""Optional numba acceleration.

Kernels are written in the numpy subset numba understands, so the same source
runs compiled or interpreted. Set ``UAVDRL_DISABLE_NUMBA=1`` to force the
pure-numpy path (useful for debugging and for the benchmark comparison).
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional speedup
    numba = None

USE_NUMBA = numba is not None and os.environ.get("UAVDRL_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def kernel(fn):
    """Compile ``fn`` with ``numba.njit`` when enabled, else return it untouched."""
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn
