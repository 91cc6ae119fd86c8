"""Numba switch.

Set ``LOCALMIN_DISABLE_NUMBA=1`` in the environment before import to run every
kernel on its pure-numpy path. Both paths are always importable so the
benchmark can time them side by side.
"""
import os

_DISABLED = os.environ.get("LOCALMIN_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    from numba import njit as _numba_njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False
    _numba_njit = None

USE_NUMBA = HAVE_NUMBA and not _DISABLED


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when numba is installed, identity otherwise."""
    kwargs.setdefault("cache", True)

    def wrap(fn):
        if not HAVE_NUMBA:
            return fn
        return _numba_njit(**kwargs)(fn)

    if len(args) == 1 and callable(args[0]):
        return wrap(args[0])
    return wrap
