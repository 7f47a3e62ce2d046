"""Numba dispatch.

Set ``LAKEPROMPT_NO_NUMBA=1`` to run every kernel through its pure-numpy
path instead of the compiled loop.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

_DISABLED = os.environ.get("LAKEPROMPT_NO_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

USE_NUMBA = numba is not None and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(fn):
    """Compile ``fn`` with numba when enabled, else return it unchanged."""
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn
