"""Hot numeric kernels with a numba path and a pure-numpy path.

Every kernel is written twice.  ``_np_*`` functions are plain vectorised
numpy; ``_nb_*`` functions are fused loops compiled with ``@njit``.  The
active table is chosen at import time from ``CGDMER_NUMBA`` and can be
switched with :func:`set_backend` (tests and the benchmark compare both).

All 2-D kernels operate on rows of a C-contiguous array.
"""

import math

import numpy as np
from scipy import special, stats

from ._jit import HAVE_NUMBA, USE_NUMBA, njit

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def _np_gelu_fwd(x):
    cdf = special.ndtr(x)
    return x * cdf, cdf


def _np_gelu_bwd(g, x, cdf):
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return g * (cdf + x * pdf)


def _np_softmax_fwd(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _np_softmax_bwd(g, y):
    return y * (g - (g * y).sum(axis=1, keepdims=True))


def _np_rownorm_fwd(x, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    return xc * rstd, rstd[:, 0]


def _np_rownorm_bwd(gxhat, xhat, rstd):
    m1 = gxhat.mean(axis=1, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
    return rstd[:, None] * (gxhat - m1 - xhat * m2)


def _np_log_sigmoid_fwd(x):
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


def _np_log_sigmoid_bwd(g, x):
    # d/dx log(sigmoid(x)) = sigmoid(-x)
    return g * np.exp(_np_log_sigmoid_fwd(-x))


def _np_im2col(x, k, pad):
    b, c, w = x.shape
    xp = np.zeros((b, c, w + 2 * pad), dtype=x.dtype)
    xp[:, :, pad : pad + w] = x
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # (b, c, wout, k)
    wout = win.shape[2]
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b, wout, c * k)


def _np_col2im(gcols, c, w, k, pad):
    b, wout, _ = gcols.shape
    g4 = gcols.reshape(b, wout, c, k)
    gxp = np.zeros((b, c, w + 2 * pad), dtype=gcols.dtype)
    for j in range(k):
        gxp[:, :, j : j + wout] += g4[:, :, :, j].transpose(0, 2, 1)
    return gxp[:, :, pad : pad + w].copy()


def _np_scatter_add_rows(out, idx, src):
    np.add.at(out, idx, src)
    return out


def _np_average_ranks(x):
    return stats.rankdata(x, method="average")


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


@njit(cache=True)
def _nb_gelu_fwd(x):
    flat = x.ravel()
    out = np.empty_like(flat)
    cdf = np.empty_like(flat)
    for i in range(flat.size):
        v = flat[i]
        c = 0.5 * (1.0 + math.erf(v * _SQRT1_2))
        cdf[i] = c
        out[i] = v * c
    return out.reshape(x.shape), cdf.reshape(x.shape)


@njit(cache=True)
def _nb_gelu_bwd(g, x, cdf):
    gf = g.ravel()
    xf = x.ravel()
    cf = cdf.ravel()
    out = np.empty_like(xf)
    for i in range(xf.size):
        v = xf[i]
        out[i] = gf[i] * (cf[i] + v * math.exp(-0.5 * v * v) * _INV_SQRT_2PI)
    return out.reshape(x.shape)


@njit(cache=True)
def _nb_softmax_fwd(x):
    r, d = x.shape
    out = np.empty_like(x)
    for i in range(r):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            e = math.exp(x[i, j] - m)
            out[i, j] = e
            s += e
        inv = 1.0 / s
        for j in range(d):
            out[i, j] *= inv
    return out


@njit(cache=True)
def _nb_softmax_bwd(g, y):
    r, d = y.shape
    out = np.empty_like(y)
    for i in range(r):
        s = 0.0
        for j in range(d):
            s += g[i, j] * y[i, j]
        for j in range(d):
            out[i, j] = y[i, j] * (g[i, j] - s)
    return out


@njit(cache=True)
def _nb_rownorm_fwd(x, eps):
    r, d = x.shape
    out = np.empty_like(x)
    rstd = np.empty(r, dtype=x.dtype)
    for i in range(r):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        var /= d
        rs = 1.0 / math.sqrt(var + eps)
        rstd[i] = rs
        for j in range(d):
            out[i, j] = (x[i, j] - mu) * rs
    return out, rstd


@njit(cache=True)
def _nb_rownorm_bwd(gxhat, xhat, rstd):
    r, d = xhat.shape
    out = np.empty_like(xhat)
    for i in range(r):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            m1 += gxhat[i, j]
            m2 += gxhat[i, j] * xhat[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            out[i, j] = rstd[i] * (gxhat[i, j] - m1 - xhat[i, j] * m2)
    return out


@njit(cache=True)
def _nb_log_sigmoid_fwd(x):
    flat = x.ravel()
    out = np.empty_like(flat)
    for i in range(flat.size):
        v = flat[i]
        out[i] = min(v, 0.0) - math.log1p(math.exp(-abs(v)))
    return out.reshape(x.shape)


@njit(cache=True)
def _nb_log_sigmoid_bwd(g, x):
    gf = g.ravel()
    xf = x.ravel()
    out = np.empty_like(xf)
    for i in range(xf.size):
        v = xf[i]
        if v >= 0:
            e = math.exp(-v)
            s = e / (1.0 + e)
        else:
            s = 1.0 / (1.0 + math.exp(v))
        out[i] = gf[i] * s
    return out.reshape(x.shape)


@njit(cache=True)
def _nb_im2col(x, k, pad):
    b, c, w = x.shape
    wout = w + 2 * pad - k + 1
    out = np.zeros((b, wout, c * k), dtype=x.dtype)
    for bi in range(b):
        for t in range(wout):
            for ci in range(c):
                for j in range(k):
                    src = t + j - pad
                    if 0 <= src < w:
                        out[bi, t, ci * k + j] = x[bi, ci, src]
    return out


@njit(cache=True)
def _nb_col2im(gcols, c, w, k, pad):
    b, wout, _ = gcols.shape
    gx = np.zeros((b, c, w), dtype=gcols.dtype)
    for bi in range(b):
        for t in range(wout):
            for ci in range(c):
                for j in range(k):
                    src = t + j - pad
                    if 0 <= src < w:
                        gx[bi, ci, src] += gcols[bi, t, ci * k + j]
    return gx


@njit(cache=True)
def _nb_scatter_add_rows(out, idx, src):
    n, d = src.shape
    for i in range(n):
        r = idx[i]
        for j in range(d):
            out[r, j] += src[i, j]
    return out


@njit(cache=True)
def _nb_average_ranks(x):
    n = x.size
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and x[order[j + 1]] == x[order[i]]:
            j += 1
        avg = 0.5 * (i + j) + 1.0
        for m in range(i, j + 1):
            ranks[order[m]] = avg
        i = j + 1
    return ranks


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_NAMES = (
    "gelu_fwd",
    "gelu_bwd",
    "softmax_fwd",
    "softmax_bwd",
    "rownorm_fwd",
    "rownorm_bwd",
    "log_sigmoid_fwd",
    "log_sigmoid_bwd",
    "im2col",
    "col2im",
    "scatter_add_rows",
    "average_ranks",
)

# Compiled loops call scalar libm exp; numpy's vectorised exp wins on these
# exp-bound kernels, so the numba table keeps the numpy version for them.
_NUMPY_FASTER = ("gelu_bwd", "softmax_fwd", "log_sigmoid_fwd", "log_sigmoid_bwd", "average_ranks")

_RAW = {
    "numpy": {n: globals()["_np_" + n] for n in _NAMES},
    "numba": {n: globals()["_nb_" + n] for n in _NAMES},
}
_TABLES = {
    "numpy": dict(_RAW["numpy"]),
    "numba": {n: (_RAW["numpy"][n] if n in _NUMPY_FASTER else _RAW["numba"][n]) for n in _NAMES},
}

_active = "numba" if USE_NUMBA else "numpy"


def backend():
    return _active


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` kernels; returns the previous name."""
    global _active
    if name not in _TABLES:
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    prev = _active
    _active = name
    return prev


def get(name):
    return _TABLES[_active][name]


def table(name):
    """Raw kernel table for one path (no per-kernel preference applied)."""
    return _RAW[name]
