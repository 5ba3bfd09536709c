"""Numba switch.

Hot kernels are decorated with :func:`njit` from this module. Setting
``OCTOSIM_DISABLE_NUMBA=1`` in the environment (before import) makes the
decorator a no-op and :mod:`octosim.kernels` then routes every public
kernel to its vectorised numpy twin instead of the scalar loop.
"""
import os

_FLAG = os.environ.get("OCTOSIM_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = _FLAG not in ("1", "true", "yes", "on")

if USE_NUMBA:
    try:
        from numba import njit as _numba_njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if USE_NUMBA:

    def njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        if len(args) == 1 and callable(args[0]):
            return _numba_njit(**kwargs)(args[0])
        return _numba_njit(*args, **kwargs)

else:

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda fn: fn
