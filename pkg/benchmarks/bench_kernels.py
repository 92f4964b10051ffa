"""Time each hot kernel under the numba and numpy paths.

    python benchmarks/bench_kernels.py [--repeat 5] [--dtype float32]

Prints one row per kernel with best-of-N wall time for both backends and
the max absolute difference between their outputs.
"""

import argparse
import time

import numpy as np

from cgdmer.numerics import kernels
from cgdmer.numerics._jit import HAVE_NUMBA


def _cases(rng, dtype):
    x = rng.normal(size=(64 * 12 * 250, 8)).astype(dtype)
    rows = rng.normal(size=(64 * 4 * 120, 120)).astype(dtype)
    y = kernels.table("numpy")["softmax_fwd"](rows)
    g = rng.normal(size=rows.shape).astype(dtype)
    normed, rstd = kernels.table("numpy")["rownorm_fwd"](rows, 1e-5)
    sig = rng.normal(size=(256, 256)).astype(dtype)
    conv_in = rng.normal(size=(64 * 120, 8, 25)).astype(dtype)
    cols = kernels.table("numpy")["im2col"](conv_in, 5, 2)
    scat_idx = rng.integers(0, 4096, size=20000)
    scat_src = rng.normal(size=(20000, 32)).astype(dtype)
    scores = rng.normal(size=20000)
    return {
        "gelu_fwd": (x,),
        "gelu_bwd": (x, x, kernels.table("numpy")["gelu_fwd"](x)[1]),
        "softmax_fwd": (rows,),
        "softmax_bwd": (g, y),
        "rownorm_fwd": (rows, 1e-5),
        "rownorm_bwd": (g, normed, rstd),
        "log_sigmoid_fwd": (sig,),
        "log_sigmoid_bwd": (sig, sig),
        "im2col": (conv_in, 5, 2),
        "col2im": (cols, 8, 25, 5, 2),
        "scatter_add_rows": (lambda: np.zeros((4096, 32), dtype=dtype), scat_idx, scat_src),
        "average_ranks": (scores,),
    }


def _call(fn, args):
    args = tuple(a() if callable(a) else a for a in args)
    return fn(*args)


def _time(fn, args, repeat):
    _call(fn, args)  # warm-up / JIT compile
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        _call(fn, args)
        best = min(best, time.perf_counter() - t0)
    return best


def _maxdiff(a, b):
    if isinstance(a, tuple):
        return max(_maxdiff(u, v) for u, v in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy path is available")
    rng = np.random.default_rng(0)
    cases = _cases(rng, np.dtype(args.dtype))
    print(f"{'kernel':<18} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'max|diff|':>10}")
    for name, call_args in cases.items():
        t_np = _time(kernels.table("numpy")[name], call_args, args.repeat)
        if HAVE_NUMBA:
            t_nb = _time(kernels.table("numba")[name], call_args, args.repeat)
            diff = _maxdiff(_call(kernels.table("numpy")[name], call_args), _call(kernels.table("numba")[name], call_args))
            print(f"{name:<18} {t_np * 1e3:>10.2f} {t_nb * 1e3:>10.2f} {t_np / t_nb:>7.1f}x {diff:>10.2e}")
        else:
            print(f"{name:<18} {t_np * 1e3:>10.2f} {'-':>10} {'-':>8} {'-':>10}")


if __name__ == "__main__":
    main()
