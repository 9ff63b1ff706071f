"""Switch between numba-compiled kernels and the plain numpy path.

Set ``SFSYNC_NO_NUMBA=1`` to force the pure-python/numpy fallback. The
fallback is also used when numba cannot be imported.
"""
import os

_DISABLED = os.environ.get("SFSYNC_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    import numba
    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _DISABLED


def njit(fn):
    """Compile ``fn`` with numba when enabled, otherwise return it untouched."""
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


def backend():
    return "numba" if USE_NUMBA else "numpy"
