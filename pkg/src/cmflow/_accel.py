"""Numba switch.

Hot kernels are written twice: an explicit-loop version compiled with
``numba.njit`` and a vectorised numpy version.  Which one the library uses
is decided once at import time:

* ``CMFLOW_DISABLE_NUMBA=1`` (or ``true``/``yes``) forces the numpy path;
* otherwise numba is used when it can be imported.
"""
import os

_FLAG = os.environ.get("CMFLOW_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and _FLAG not in ("1", "true", "yes", "on")


def njit(func=None, *, cache=True):
    """Compile ``func`` with numba when available, else return it unchanged.

    The undecorated function stays reachable as ``func.py_func`` in both
    cases so callers can run the interpreted version explicitly.
    """
    if func is None:
        return lambda f: njit(f, cache=cache)
    if not NUMBA_AVAILABLE:
        func.py_func = func
        return func
    return numba.njit(cache=cache, nogil=True)(func)


def backend():
    return "numba" if USE_NUMBA else "numpy"
