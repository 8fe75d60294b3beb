"""Optional numba acceleration.

Set ``MIXLIMIT_DISABLE_NUMBA=1`` before import to force the pure-numpy paths.
"""
import os

JIT_OPTIONS = {"nogil": True, "cache": True}

_disabled = os.environ.get("MIXLIMIT_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False
    _njit = None

USE_NUMBA = HAVE_NUMBA and not _disabled


def maybe_njit(fn):
    """Compile ``fn`` whenever numba is importable, ignoring the env flag.

    Lets the benchmark time both paths in one process.
    """
    if HAVE_NUMBA:
        return _njit(**JIT_OPTIONS)(fn)
    return None
