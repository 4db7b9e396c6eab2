"""Numba switch.

Kernels are compiled with numba unless ``THIN2GRAPH_DISABLE_NUMBA`` is set to a
truthy value (or numba is not importable), in which case the pure
numpy/python implementations in :mod:`thin2graph.kernels` are used.
"""
import os

_FALSY = {"", "0", "false", "no", "off"}


def _numba_requested():
    return os.environ.get("THIN2GRAPH_DISABLE_NUMBA", "").strip().lower() in _FALSY


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and _numba_requested()


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or a no-op decorator when numba is off.

    The undecorated function stays reachable as ``.py_func`` in both cases so
    benchmarks and tests can call the interpreted version explicitly.
    """
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)

    def deco(fn):
        if USE_NUMBA:
            return _numba.njit(**kwargs)(fn)
        fn.py_func = fn
        return fn

    if len(args) == 1 and callable(args[0]):
        return deco(args[0])
    return deco
