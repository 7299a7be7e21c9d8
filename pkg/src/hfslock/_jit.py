"""numba switch.

Set ``HFSLOCK_DISABLE_NUMBA=1`` before import to run every hot kernel through
its pure-numpy implementation instead of the compiled one.
"""
import os

DISABLED = os.environ.get("HFSLOCK_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise.

    Compilation happens lazily on first call, so importing a module full of
    jitted kernels costs nothing when the numpy path is selected.
    """
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(fn):
        return fn

    return wrap
