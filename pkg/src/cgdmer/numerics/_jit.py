"""Optional numba acceleration.

Kernels in :mod:`cgdmer.numerics.kernels` exist in two flavours: a pure
numpy path and an ``@njit`` path.  The numba path is used when numba imports
and ``CGDMER_NUMBA`` is not set to ``0``.
"""

import os


def _noop_jit(*args, **kwargs):
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def deco(f):
        return f

    return deco


def _have_numba():
    try:
        import numba  # noqa: F401

        return True
    except ImportError:
        return False


HAVE_NUMBA = _have_numba()
USE_NUMBA = HAVE_NUMBA and os.environ.get("CGDMER_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

if HAVE_NUMBA:
    from numba import njit, prange
else:
    njit = _noop_jit
    prange = range
