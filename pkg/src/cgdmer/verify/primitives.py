"""Random gradient-check instances for every differentiable primitive.

Each builder draws shapes and values from ``rng`` and returns
``(fn, leaves)``; ``fn()`` evaluates a scalar by contracting the primitive's
output with a fixed random weight tensor so no output direction is ignored.
"""

import numpy as np

from .. import numerics as nx
from ..numerics import Tensor


def _leaf(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _dims(rng, k, lo=1, hi=4):
    return tuple(int(v) for v in rng.integers(lo, hi + 1, size=k))


def _case(op, make):
    def build(rng):
        leaves, call = make(rng)
        w = rng.normal(size=call().shape)
        wt = Tensor(w)
        return (lambda: (call() * wt).sum()), leaves

    build.__name__ = op
    return build


def _binary(fn, positive_b=False):
    def make(rng):
        shape = _dims(rng, int(rng.integers(1, 4)))
        bshape = tuple(1 if rng.random() < 0.3 else s for s in shape)
        a = _leaf(rng, shape)
        b = _leaf(rng, bshape, 0.5, 2.0) if positive_b else _leaf(rng, bshape)
        return [a, b], lambda: fn(a, b)

    return make


def _unary(fn, lo=-2.0, hi=2.0):
    def make(rng):
        a = _leaf(rng, _dims(rng, int(rng.integers(1, 4))), lo, hi)
        return [a], lambda: fn(a)

    return make


def _matmul(rng):
    if rng.random() < 0.5:
        m, k, n = _dims(rng, 3)
        a, b = _leaf(rng, (m, k)), _leaf(rng, (k, n))
    else:
        bt, m, k, n = _dims(rng, 4)
        a = _leaf(rng, (bt, m, k))
        b = _leaf(rng, (k, n)) if rng.random() < 0.5 else _leaf(rng, (bt, k, n))
    return [a, b], lambda: nx.matmul(a, b)


def _transpose(rng):
    shape = _dims(rng, 3)
    axes = tuple(int(v) for v in rng.permutation(3))
    a = _leaf(rng, shape)
    return [a], lambda: nx.transpose(a, axes)


def _reshape(rng):
    shape = _dims(rng, 3)
    a = _leaf(rng, shape)
    return [a], lambda: nx.reshape(a, (shape[0] * shape[1], shape[2]))


def _concat(rng):
    r, c = _dims(rng, 2)
    a, b = _leaf(rng, (r, c)), _leaf(rng, (r, int(rng.integers(1, 4))))
    return [a, b], lambda: nx.concat([a, b], axis=1)


def _slice(rng):
    r, c = _dims(rng, 2, 2, 5)
    a = _leaf(rng, (r, c))
    return [a], lambda: a[1:, : c - 1]


def _take(rng):
    r, c = _dims(rng, 2, 2, 5)
    a = _leaf(rng, (r, c))
    idx = rng.integers(0, r, size=int(rng.integers(1, 6)))
    return [a], lambda: nx.take(a, idx, axis=0)


def _gather_rows(rng):
    b, s, d = _dims(rng, 3, 2, 4)
    a = _leaf(rng, (b, s, d))
    idx = rng.integers(0, s, size=(b, int(rng.integers(1, 4))))
    return [a], lambda: nx.gather_rows(a, idx)


def _reduce(fn):
    def make(rng):
        shape = _dims(rng, 3)
        a = _leaf(rng, shape)
        axis = int(rng.integers(0, 3)) if rng.random() < 0.7 else None
        return [a], lambda: fn(a, axis=axis)

    return make


def _softmax(rng):
    shape = _dims(rng, 2, 2, 5)
    a = _leaf(rng, shape, -3, 3)
    axis = int(rng.integers(0, 2))
    return [a], lambda: nx.softmax(a, axis=axis)


def _logsumexp(rng):
    shape = _dims(rng, 2, 2, 5)
    a = _leaf(rng, shape, -3, 3)
    return [a], lambda: nx.logsumexp(a, axis=-1)


def _layer_norm(rng):
    r, d = _dims(rng, 2, 2, 6)
    x = _leaf(rng, (r, d), -2, 2)
    g, b = _leaf(rng, (d,), 0.5, 1.5), _leaf(rng, (d,))
    return [x, g, b], lambda: nx.layer_norm(x, g, b)


def _group_norm(rng):
    groups = int(rng.integers(1, 3))
    c = groups * int(rng.integers(1, 3))
    bsz, w = _dims(rng, 2, 1, 4)
    x = _leaf(rng, (bsz, c, w + 1), -2, 2)
    g, b = _leaf(rng, (c,), 0.5, 1.5), _leaf(rng, (c,))
    return [x, g, b], lambda: nx.group_norm(x, groups, g, b)


def _l2n(rng):
    shape = _dims(rng, 2, 1, 5)
    a = _leaf(rng, shape)
    return [a], lambda: nx.l2_normalize(a)


def _pairwise(fn):
    def make(rng):
        shape = _dims(rng, 2, 1, 5)
        a, b = _leaf(rng, shape), _leaf(rng, shape)
        return [a, b], lambda: fn(a, b)

    return make


def _sce(rng):
    n, c = _dims(rng, 2, 1, 5)
    logits = _leaf(rng, (n, c + 1), -3, 3)
    t = rng.integers(0, c + 1, size=n)
    return [logits], lambda: nx.softmax_cross_entropy(logits, t)


def _conv1d(rng):
    bsz, cin, cout = _dims(rng, 3, 1, 3)
    k = int(rng.choice([1, 3, 5]))
    w = int(rng.integers(2, 7))
    x = _leaf(rng, (bsz, cin, w))
    wt = _leaf(rng, (cout, cin, k))
    b = _leaf(rng, (cout,))
    return [x, wt, b], lambda: nx.conv1d(x, wt, b)


PRIMITIVES = {
    "add": _case("add", _binary(nx.add)),
    "sub": _case("sub", _binary(nx.sub)),
    "multiply": _case("multiply", _binary(nx.mul)),
    "divide": _case("divide", _binary(nx.div, positive_b=True)),
    "negate": _case("negate", _unary(nx.neg)),
    "matmul": _case("matmul", _matmul),
    "transpose": _case("transpose", _transpose),
    "reshape": _case("reshape", _reshape),
    "concat": _case("concat", _concat),
    "slice": _case("slice", _slice),
    "gather": _case("gather", _take),
    "gather_rows": _case("gather_rows", _gather_rows),
    "mean": _case("mean", _reduce(nx.mean)),
    "sum": _case("sum", _reduce(nx.sum_)),
    "exp": _case("exp", _unary(nx.exp)),
    "log": _case("log", _unary(nx.log, 0.2, 3.0)),
    "sqrt": _case("sqrt", _unary(nx.sqrt, 0.2, 3.0)),
    "square": _case("square", _unary(nx.square)),
    "gelu": _case("gelu", _unary(nx.gelu, -3, 3)),
    "softmax": _case("softmax", _softmax),
    "sigmoid": _case("sigmoid", _unary(nx.sigmoid, -4, 4)),
    "log_sigmoid": _case("log_sigmoid", _unary(nx.log_sigmoid, -4, 4)),
    "logsumexp": _case("logsumexp", _logsumexp),
    "layer_norm": _case("layer_norm", _layer_norm),
    "group_norm": _case("group_norm", _group_norm),
    "l2_normalize": _case("l2_normalize", _l2n),
    "sq_l2_distance": _case("sq_l2_distance", _pairwise(nx.sq_l2_distance)),
    "cosine_similarity": _case("cosine_similarity", _pairwise(nx.cosine_similarity)),
    "softmax_cross_entropy": _case("softmax_cross_entropy", _sce),
    "conv1d": _case("conv1d", _conv1d),
}


def check_primitive(name, instances=20, seed=0, h=1e-5, tol=1e-4):
    """Run grad_check on ``instances`` random draws; returns the worst result."""
    build = PRIMITIVES[name]
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    worst = None
    for _ in range(instances):
        fn, leaves = build(rng)
        res = nx.grad_check_many(fn, leaves, h=h, tol=tol)
        if worst is None or res.max_rel_err > worst.max_rel_err:
            worst = res
    return worst
