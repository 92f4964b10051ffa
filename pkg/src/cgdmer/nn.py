"""Parameter registry and transformer building blocks on top of numerics."""

import math

import numpy as np

from . import numerics as nx
from .numerics import Tensor

NEG_INF = -1e9


def param(values, name=None):
    return Tensor(values, requires_grad=True, name=name)


def normal_param(rng, shape, std=0.02, dtype=np.float32):
    return param(rng.normal(0.0, std, size=shape).astype(dtype))


class Module:
    """Base class; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix=""):
        out = []
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((name, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out.append((f"{name}.{i}", item))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state_dict(self):
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for n, p in params.items():
            arr = np.asarray(state[n])
            if arr.shape != p.shape:
                raise ValueError(f"{n}: shape {arr.shape} does not match {p.shape}")
            p.data = arr.astype(p.dtype).copy()


class Linear(Module):
    def __init__(self, rng, d_in, d_out, bias=True, std=0.02, dtype=np.float32):
        self.weight = normal_param(rng, (d_in, d_out), std, dtype)
        self.bias = param(np.zeros(d_out, dtype=dtype)) if bias else None

    def __call__(self, x):
        y = nx.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d, dtype=np.float32):
        self.gamma = param(np.ones(d, dtype=dtype))
        self.beta = param(np.zeros(d, dtype=dtype))

    def __call__(self, x):
        return nx.layer_norm(x, self.gamma, self.beta)


def dropout(x, rate, rng):
    if rate <= 0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * Tensor._wrap(keep)


class FeedForward(Module):
    def __init__(self, rng, d, d_ff, dtype=np.float32):
        self.fc1 = Linear(rng, d, d_ff, dtype=dtype)
        self.fc2 = Linear(rng, d_ff, d, dtype=dtype)

    def __call__(self, x):
        return self.fc2(nx.gelu(self.fc1(x)))


class Attention(Module):
    """Multi-head scaled dot-product attention (self or cross).

    Keys carry no bias: a per-row constant added to every score cancels in the
    softmax, so such a parameter would receive an exactly zero gradient.
    """

    def __init__(self, rng, d, heads, cross=False, dtype=np.float32):
        if d % heads:
            raise ValueError(f"model dim {d} not divisible by {heads} heads")
        self._heads = heads
        self._cross = cross
        self.q = Linear(rng, d, d, dtype=dtype)
        self.k = Linear(rng, d, d, bias=False, dtype=dtype)
        self.v = Linear(rng, d, d, dtype=dtype)
        self.out = Linear(rng, d, d, dtype=dtype)
        self._last_weights = None

    def _heads_view(self, x):
        b, s, d = x.shape
        h = self._heads
        return nx.transpose(nx.reshape(x, (b, s, h, d // h)), (0, 2, 1, 3))

    def __call__(self, x, context=None, key_valid=None, causal=False):
        b, sq, d = x.shape
        dh = d // self._heads
        src = context if self._cross else x
        sk = src.shape[1]
        q, k, v = self._heads_view(self.q(x)), self._heads_view(self.k(src)), self._heads_view(self.v(src))
        scores = nx.matmul(q, nx.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
        bias = None
        if key_valid is not None:
            kb = np.where(np.asarray(key_valid, dtype=bool), 0.0, NEG_INF).astype(x.dtype)
            bias = kb[:, None, None, :]
        if causal:
            cb = np.triu(np.full((sq, sk), NEG_INF, dtype=x.dtype), k=1)[None, None]
            bias = cb if bias is None else bias + cb
        if bias is not None:
            scores = scores + Tensor._wrap(bias)
        weights = nx.softmax(scores, axis=-1)
        self._last_weights = weights.data
        ctx = nx.matmul(weights, v)
        ctx = nx.reshape(nx.transpose(ctx, (0, 2, 1, 3)), (b, sq, d))
        return self.out(ctx)


class Block(Module):
    """Pre-norm transformer block; ``cross=True`` adds encoder-decoder attention."""

    def __init__(self, rng, d, heads, d_ff, cross=False, dropout=0.0, dtype=np.float32):
        self.norm1 = LayerNorm(d, dtype)
        self.attn = Attention(rng, d, heads, dtype=dtype)
        if cross:
            self.norm_x = LayerNorm(d, dtype)
            self.xattn = Attention(rng, d, heads, cross=True, dtype=dtype)
        self.norm2 = LayerNorm(d, dtype)
        self.ff = FeedForward(rng, d, d_ff, dtype)
        self._cross = cross
        self._dropout = dropout

    def __call__(self, x, key_valid=None, causal=False, context=None, context_valid=None, rng=None):
        x = x + dropout(self.attn(self.norm1(x), key_valid=key_valid, causal=causal), self._dropout, rng)
        if self._cross:
            a = self.xattn(self.norm_x(x), context=context, key_valid=context_valid)
            x = x + dropout(a, self._dropout, rng)
        return x + dropout(self.ff(self.norm2(x)), self._dropout, rng)

