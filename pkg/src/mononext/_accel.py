"""Numba switch for the hot geometry kernels.

Set ``MONONEXT_DISABLE_NUMBA=1`` to run every kernel as plain Python/numpy.
The same kernel source backs both paths, so results agree to rounding.
"""
import os

_FLAG = os.environ.get("MONONEXT_DISABLE_NUMBA", "0").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def no_jit(fn):
    return fn


def njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=False, fastmath=False)(fn)
