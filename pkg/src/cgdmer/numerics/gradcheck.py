"""Central finite-difference verification of reverse-mode gradients."""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, backward, no_grad


@dataclass
class GradCheckResult:
    passed: bool
    max_rel_err: float
    worst_index: tuple
    analytic: float
    numeric: float
    checked: int

    def __bool__(self):
        return self.passed


def grad_check(fn, leaf, h=1e-5, tol=1e-4, indices=None):
    """Compare backward() against (f(x+h) - f(x-h)) / 2h coordinate by coordinate.

    ``fn`` takes no arguments and rebuilds the scalar expression from the
    current contents of ``leaf`` (a float64 Tensor with requires_grad).
    ``indices`` restricts the check to a subset of flat coordinates.  The
    relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
    """
    if leaf.dtype != np.float64:
        raise TypeError("grad_check requires a float64 leaf")
    out = fn()
    if out.data.size != 1:
        raise ValueError(f"grad_check: expression must be scalar, got shape {out.shape}")
    (analytic,) = backward(out, [leaf])
    analytic = analytic.reshape(-1).copy()

    flat = leaf.data.reshape(-1)
    coords = range(flat.size) if indices is None else indices
    worst = (0.0, None, 0.0, 0.0)
    n = 0
    with no_grad():
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn().data)
            flat[i] = orig - h
            fm = float(fn().data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            a = float(analytic[i])
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            n += 1
            if worst[1] is None or err > worst[0]:
                worst = (err, i, a, num)
    err, i, a, num = worst
    idx = tuple(int(j) for j in np.unravel_index(i, leaf.shape)) if i is not None else ()
    return GradCheckResult(err <= tol, err, idx, a, num, n)


def grad_check_many(fn, leaves, h=1e-5, tol=1e-4, max_coords=None, rng=None):
    """grad_check over several leaves; returns the worst result."""
    worst = None
    for leaf in leaves:
        idx = None
        if max_coords is not None and leaf.size > max_coords:
            rng = rng if rng is not None else np.random.default_rng(0)
            idx = rng.choice(leaf.size, size=max_coords, replace=False)
        res = grad_check(fn, leaf, h=h, tol=tol, indices=idx)
        if worst is None or res.max_rel_err > worst.max_rel_err:
            worst = res
    return worst


def leaf64(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)
