"""Dense tensors with tape-free reverse-mode differentiation.

Each primitive returns a new :class:`Tensor` holding references to its
parents and a closure mapping the upstream gradient to one gradient per
parent.  :func:`backward` sorts the reachable graph topologically and walks
it in reverse, summing contributions from every consumer.
"""

from contextlib import contextmanager

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.array(data, dtype=dtype, copy=True) if dtype is not None else np.array(data, copy=True)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in input tensor{' ' + name if name else ''}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    @classmethod
    def _wrap(cls, arr, parents=(), backward=None, op="leaf"):
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.name = None
        t.op = op
        if _grad_enabled and backward is not None and any(p.requires_grad for p in parents):
            t.requires_grad = True
            t._parents = parents
            t._backward = backward
        else:
            t.requires_grad = False
            t._parents = ()
            t._backward = None
        return t

    # -- conveniences ------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor._wrap(self.data)

    def backward(self, wrt=None):
        return backward(self, wrt)

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg}, op={self.op})"

    def __len__(self):
        return self.data.shape[0]

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __rmatmul__ = lambda self, o: matmul(o, self)
    __neg__ = lambda self: neg(self)
    __getitem__ = lambda self, key: getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x, like=None):
    """Wrap constants; when ``like`` is given the constant takes its dtype."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=like.dtype if like is not None else None)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    nd = g.ndim - len(shape)
    if nd > 0:
        g = g.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_check(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def _topo_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root, wrt=None):
    """Reverse-mode pass from a scalar ``root``.

    Every reachable leaf with ``requires_grad`` gets ``.grad`` set to
    d(root)/d(leaf).  Tensors listed in ``wrt`` that are not reachable get a
    zero gradient.  Returns the gradients of ``wrt`` (or None).
    """
    if root.data.size != 1:
        raise ShapeError(f"backward: root must be a scalar, got shape {root.shape}")
    if wrt is not None:
        for t in wrt:
            t.grad = None
    if not root.requires_grad:
        if wrt is None:
            return None
        for t in wrt:
            t.grad = np.zeros_like(t.data)
        return [t.grad for t in wrt]

    order = _topo_order(root)
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            node.grad = g if g is not None else np.zeros_like(node.data)
            continue
        if g is None:
            continue
        pgs = node._backward(g)
        for p, pg in zip(node._parents, pgs):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            if k in grads:
                grads[k] = grads[k] + pg
            else:
                grads[k] = pg
    if wrt is None:
        return None
    out = []
    for t in wrt:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        out.append(t.grad)
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = _pair(a, b)
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    return Tensor._wrap(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = _pair(a, b)
    _broadcast_check("sub", a, b)
    sa, sb = a.shape, b.shape
    return Tensor._wrap(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = _pair(a, b)
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return Tensor._wrap(ad * bd, (a, b), bw, "mul")


def div(a, b):
    a, b = _pair(a, b)
    _broadcast_check("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return Tensor._wrap(out, (a, b), bw, "div")


def neg(a):
    return Tensor._wrap(-a.data, (a,), lambda g: (-g,), "neg")


def _pair(a, b):
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        return a, b
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    return as_tensor(a, like=b), b


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation
# ---------------------------------------------------------------------------


def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if a.ndim > 2 and b.ndim > 2:
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim >= 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return Tensor._wrap(ad @ bd, (a, b), bw, "matmul")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(ax % a.ndim for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    return Tensor._wrap(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def reshape(a, shape):
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None
    return Tensor._wrap(out, (a,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref.shape)) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ref.shape} and {t.shape} along axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        out = []
        for i, t in enumerate(tensors):
            if not t.requires_grad:
                out.append(None)
                continue
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(sl)])
        return tuple(out)

    return Tensor._wrap(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw, "concat")


def _is_basic_key(key):
    keys = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, slice, type(None), type(Ellipsis))) for k in keys)


def getitem(a, key):
    shape, dtype = a.shape, a.dtype
    basic = _is_basic_key(key)

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return Tensor._wrap(a.data[key], (a,), bw, "getitem")


def take(a, idx, axis=0):
    """Gather entries of ``a`` along ``axis`` at integer positions ``idx``."""
    idx = np.asarray(idx, dtype=np.int64)
    ax = axis % a.ndim
    n = a.shape[ax]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise ShapeError(f"take: index out of range for axis {axis} of shape {a.shape}")
    idx = np.where(idx < 0, idx + n, idx)
    shape = a.shape

    def bw(g):
        moved_shape = (shape[ax],) + shape[:ax] + shape[ax + 1 :]
        full = np.zeros((shape[ax], int(np.prod(moved_shape[1:]))), dtype=g.dtype)
        gm = np.moveaxis(g, list(range(ax, ax + idx.ndim)), list(range(idx.ndim)))
        src = np.ascontiguousarray(gm.reshape(idx.size, -1))
        kernels.get("scatter_add_rows")(full, idx.reshape(-1), src)
        return (np.moveaxis(full.reshape(moved_shape), 0, ax),)

    return Tensor._wrap(np.take(a.data, idx, axis=ax), (a,), bw, "take")


def gather_rows(a, idx):
    """Per-batch row gather: ``a`` (B, S, d), ``idx`` (B, K) -> (B, K, d)."""
    idx = np.asarray(idx, dtype=np.int64)
    if a.ndim != 3 or idx.ndim != 2 or idx.shape[0] != a.shape[0]:
        raise ShapeError(f"gather_rows: incompatible shapes {a.shape} and {idx.shape}")
    b, s, d = a.shape
    flat = (np.arange(b)[:, None] * s + idx).reshape(-1)
    out = take(reshape(a, (b * s, d)), flat, axis=0)
    return reshape(out, (b, idx.shape[1], d))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._wrap(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    shape = a.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return Tensor._wrap(np.mean(a.data, axis=axes, keepdims=keepdims), (a,), bw, "mean")


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------


def exp(a):
    out = np.exp(a.data)
    return Tensor._wrap(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    ad = a.data
    return Tensor._wrap(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a):
    out = np.sqrt(a.data)
    return Tensor._wrap(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def square(a):
    ad = a.data
    return Tensor._wrap(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def gelu(a):
    """Exact GELU, x * Phi(x)."""
    ad = np.ascontiguousarray(a.data)
    out, cdf = kernels.get("gelu_fwd")(ad)
    return Tensor._wrap(out, (a,), lambda g: (kernels.get("gelu_bwd")(np.ascontiguousarray(g), ad, cdf),), "gelu")


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a):
    out = _sigmoid_np(a.data)
    return Tensor._wrap(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(a):
    ad = np.ascontiguousarray(a.data)
    out = kernels.get("log_sigmoid_fwd")(ad)
    return Tensor._wrap(
        out, (a,), lambda g: (kernels.get("log_sigmoid_bwd")(np.ascontiguousarray(g), ad),), "log_sigmoid"
    )


def _rows(x, axis):
    """Move ``axis`` last and flatten to rows; returns (rows, restore)."""
    ax = axis % x.ndim
    if ax == x.ndim - 1:
        moved = x
    else:
        moved = np.moveaxis(x, ax, -1)
    mshape = moved.shape
    rows = np.ascontiguousarray(moved).reshape(-1, mshape[-1])

    def restore(r):
        r = r.reshape(mshape)
        return r if ax == x.ndim - 1 else np.moveaxis(r, -1, ax)

    return rows, restore


def softmax(a, axis=-1):
    rows, restore = _rows(a.data, axis)
    y = kernels.get("softmax_fwd")(rows)

    def bw(g):
        grows, _ = _rows(g, axis)
        return (restore(kernels.get("softmax_bwd")(grows, y)),)

    return Tensor._wrap(restore(y), (a,), bw, "softmax")


def logsumexp(a, axis=-1):
    rows, restore = _rows(a.data, axis)
    m = rows.max(axis=1, keepdims=True)
    s = np.exp(rows - m).sum(axis=1, keepdims=True)
    out = (m + np.log(s))[:, 0]
    out_shape = tuple(n for i, n in enumerate(a.shape) if i != axis % a.ndim)

    def bw(g):
        p = kernels.get("softmax_fwd")(rows)
        return (restore(p * g.reshape(-1, 1)),)

    return Tensor._wrap(out.reshape(out_shape), (a,), bw, "logsumexp")


def softmax_cross_entropy(logits, targets):
    """Per-row negative log-likelihood of integer ``targets`` under softmax(logits)."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    c = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise ShapeError(f"softmax_cross_entropy: target out of range for {c} classes")
    rows = np.ascontiguousarray(logits.data).reshape(-1, c)
    t = targets.reshape(-1)
    m = rows.max(axis=1)
    lse = m + np.log(np.exp(rows - m[:, None]).sum(axis=1))
    nll = lse - rows[np.arange(rows.shape[0]), t]
    shape = logits.shape

    def bw(g):
        p = kernels.get("softmax_fwd")(rows)
        p[np.arange(rows.shape[0]), t] -= 1.0
        return ((p * g.reshape(-1, 1)).reshape(shape),)

    return Tensor._wrap(nll.reshape(targets.shape), (logits,), bw, "softmax_cross_entropy")


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------


def layer_norm(x, gamma, beta, eps=1e-5):
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: input {x.shape} vs affine {gamma.shape}/{beta.shape}")
    rows = np.ascontiguousarray(x.data).reshape(-1, d)
    xhat, rstd = kernels.get("rownorm_fwd")(rows, eps)
    gd = gamma.data
    out = (xhat * gd + beta.data).reshape(x.shape)

    def bw(g):
        g2 = g.reshape(-1, d)
        gx = kernels.get("rownorm_bwd")(np.ascontiguousarray(g2 * gd), xhat, rstd).reshape(x.shape)
        return gx, (g2 * xhat).sum(axis=0), g2.sum(axis=0)

    return Tensor._wrap(out, (x, gamma, beta), bw, "layer_norm")


def group_norm(x, groups, gamma, beta, eps=1e-5):
    """Group normalisation for channels-first input (B, C, ...)."""
    b, c = x.shape[0], x.shape[1]
    if c % groups:
        raise ShapeError(f"group_norm: {c} channels not divisible into {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"group_norm: input {x.shape} vs affine {gamma.shape}/{beta.shape}")
    rows = np.ascontiguousarray(x.data).reshape(b * groups, -1)
    xhat, rstd = kernels.get("rownorm_fwd")(rows, eps)
    bshape = (1, c) + (1,) * (x.ndim - 2)
    gd = gamma.data.reshape(bshape)
    xh = xhat.reshape(x.shape)
    out = xh * gd + beta.data.reshape(bshape)
    red = (0,) + tuple(range(2, x.ndim))

    def bw(g):
        gxhat = np.ascontiguousarray((g * gd).reshape(b * groups, -1))
        gx = kernels.get("rownorm_bwd")(gxhat, xhat, rstd).reshape(x.shape)
        return gx, (g * xh).sum(axis=red), g.sum(axis=red)

    return Tensor._wrap(out, (x, gamma, beta), bw, "group_norm")


def l2_normalize(a, eps=1e-12):
    """Scale vectors along the last axis to unit L2 norm."""
    ad = a.data
    n = np.sqrt((ad * ad).sum(axis=-1, keepdims=True) + eps * eps)
    y = ad / n

    def bw(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / n,)

    return Tensor._wrap(y, (a,), bw, "l2_normalize")


def sq_l2_distance(a, b):
    """Squared Euclidean distance along the last axis."""
    a, b = _pair(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"sq_l2_distance: incompatible shapes {a.shape} and {b.shape}")
    diff = a.data - b.data

    def bw(g):
        gd = 2.0 * diff * g[..., None]
        return gd, -gd

    return Tensor._wrap((diff * diff).sum(axis=-1), (a, b), bw, "sq_l2_distance")


def cosine_similarity(a, b, eps=1e-8):
    """Cosine similarity along the last axis; pairs with a norm below ``eps`` score 0."""
    a, b = _pair(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    na = np.sqrt((ad * ad).sum(axis=-1))
    nb = np.sqrt((bd * bd).sum(axis=-1))
    ok = (na >= eps) & (nb >= eps)
    sa = np.where(ok, na, 1.0)
    sb = np.where(ok, nb, 1.0)
    dot = (ad * bd).sum(axis=-1)
    c = np.where(ok, dot / (sa * sb), 0.0).astype(ad.dtype)

    def bw(g):
        gg = np.where(ok, g, 0.0)[..., None]
        inv = 1.0 / (sa * sb)
        ga = gg * (bd * inv[..., None] - (c / (sa * sa))[..., None] * ad)
        gb = gg * (ad * inv[..., None] - (c / (sb * sb))[..., None] * bd)
        return ga.astype(ad.dtype), gb.astype(bd.dtype)

    return Tensor._wrap(c, (a, b), bw, "cosine_similarity")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def conv1d(x, w, b=None):
    """Stride-1 'same' 1-D convolution. x (B, Cin, W), w (Cout, Cin, K), K odd."""
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {w.shape}")
    cout, cin, k = w.shape
    if k % 2 == 0:
        raise ShapeError(f"conv1d: kernel size must be odd for same padding, got {k}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv1d: bias {b.shape} vs {cout} output channels")
    pad = (k - 1) // 2
    bsz, _, width = x.shape
    cols = kernels.get("im2col")(np.ascontiguousarray(x.data), k, pad)  # (B, W, Cin*K)
    w2 = w.data.reshape(cout, cin * k)
    out = cols @ w2.T  # (B, W, Cout)
    if b is not None:
        out += b.data
    out = np.ascontiguousarray(out.transpose(0, 2, 1))

    def bw(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 1))  # (B, W, Cout)
        gw = (gt.reshape(-1, cout).T @ cols.reshape(-1, cin * k)).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gcols = np.ascontiguousarray(gt @ w2)
            gx = kernels.get("col2im")(gcols, cin, width, k, pad)
        gb = gt.sum(axis=(0, 1)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor._wrap(out, parents, bw, "conv1d")
