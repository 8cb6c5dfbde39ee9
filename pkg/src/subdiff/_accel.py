"""Optional numba acceleration.

Hot kernels are written once in a numba-compatible subset of Python/numpy and
decorated with :func:`njit`.  When numba is missing, or ``SUBDIFF_DISABLE_NUMBA``
is set to a truthy value, the decorator is the identity and every kernel module
dispatches to its vectorized numpy counterpart instead.
"""
from __future__ import annotations

import os

_FLAG = os.environ.get("SUBDIFF_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by SUBDIFF_DISABLE_NUMBA")
    import warnings

    import numba
    from numba import prange

    # an outdated system TBB only means numba falls back to another threading layer
    warnings.filterwarnings("ignore", message=".*TBB.*", category=numba.NumbaWarning)
    USING_NUMBA = True

    def njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)

except ImportError:
    numba = None
    prange = range
    USING_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def set_threads(n: int) -> int:
    """Set the numba thread count (0 = leave the default). Returns the count in use."""
    if not USING_NUMBA:
        return 1
    if n <= 0:
        return int(numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return numba.get_num_threads()
