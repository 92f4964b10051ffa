"""Patch decomposition, per-lead tokenisation, and lead-uniform masking."""

from dataclasses import dataclass
import math

import numpy as np

from . import numerics as nx
from .nn import Module, normal_param, param


@dataclass
class PatchGrid:
    """Non-overlapping temporal patches, shape (..., L, N, P)."""

    patches: np.ndarray

    @property
    def lead_count(self):
        return self.patches.shape[-3]

    @property
    def patch_count(self):
        return self.patches.shape[-2]

    @property
    def patch_length(self):
        return self.patches.shape[-1]


def _divisors(t):
    return [n for n in range(1, t + 1) if t % n == 0]


def patchify(record, n):
    """Split an (L, T) or (B, L, T) signal into N patches per lead."""
    record = np.asarray(record)
    t = record.shape[-1]
    if n <= 0 or t % n:
        raise ValueError(f"T={t} is not divisible by N={n}; valid patch counts: {_divisors(t)}")
    return PatchGrid(record.reshape(record.shape[:-1] + (n, t // n)))


def unpatchify(grid):
    p = grid.patches
    return p.reshape(p.shape[:-2] + (p.shape[-2] * p.shape[-1],))


def round_half_away(x):
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def masked_per_lead(n, r):
    """Masked patches per lead: round(N r), ties away from zero."""
    if not 0.0 < r < 1.0:
        raise ValueError(f"mask ratio must lie in (0, 1), got {r}")
    k = round_half_away(n * r)
    if k <= 0 or k >= n:
        raise ValueError(f"mask ratio {r} with N={n} masks {k} patches per lead; need 0 < k < N")
    return k


@dataclass(frozen=True)
class MaskSet:
    """Masked (lead, patch) positions; ``mask[l, n]`` is True when hidden."""

    mask: np.ndarray
    ratio: float

    @property
    def per_lead(self):
        return int(self.mask[0].sum())

    @property
    def indices(self):
        return [tuple(int(v) for v in ij) for ij in np.argwhere(self.mask)]

    def __len__(self):
        return int(self.mask.sum())

    def flat_masked(self):
        """Lead-major flat indices of masked tokens, ascending."""
        return np.flatnonzero(self.mask.reshape(-1))

    def flat_visible(self):
        return np.flatnonzero(~self.mask.reshape(-1))


def select_mask(leads, n, r, seed):
    """Hide round(N r) patches per lead, sampled uniformly without replacement."""
    k = masked_per_lead(n, r)
    rng = np.random.default_rng(seed)
    mask = np.zeros((leads, n), dtype=bool)
    for lead in range(leads):
        mask[lead, rng.choice(n, size=k, replace=False)] = True
    return MaskSet(mask, r)


class PatchTokenizer(Module):
    """Conv -> GELU -> GroupNorm stages on a single-channel patch, then mean over time."""

    def __init__(self, rng, d, channels=None, kernel=5, groups=4, dtype=np.float32):
        channels = list(channels) if channels else [d // 2, d]
        if channels[-1] != d:
            raise ValueError(f"last tokenizer channel width {channels[-1]} must equal d={d}")
        self._groups = groups
        self.convs = []
        self.norms = []
        cin = 1
        for cout in channels:
            if cout % groups:
                raise ValueError(f"{cout} channels not divisible into {groups} groups")
            std = math.sqrt(2.0 / (cin * kernel))
            self.convs.append(_Conv(rng, cin, cout, kernel, std, dtype))
            self.norms.append(_GroupNormParams(cout, dtype))
            cin = cout

    def __call__(self, x):
        """x: (M, P) patches -> (M, d) tokens."""
        h = nx.reshape(x, (x.shape[0], 1, x.shape[1]))
        for conv, norm in zip(self.convs, self.norms):
            h = nx.group_norm(nx.gelu(nx.conv1d(h, conv.weight, conv.bias)), self._groups, norm.gamma, norm.beta)
        return nx.mean(h, axis=2)


class _Conv(Module):
    def __init__(self, rng, cin, cout, k, std, dtype):
        self.weight = normal_param(rng, (cout, cin, k), std, dtype)
        self.bias = param(np.zeros(cout, dtype=dtype))


class _GroupNormParams(Module):
    def __init__(self, c, dtype):
        self.gamma = param(np.ones(c, dtype=dtype))
        self.beta = param(np.zeros(c, dtype=dtype))


class EmbeddingTable(Module):
    """Lead (spatial) and shared temporal embeddings plus the patch tokenizer."""

    def __init__(self, rng, leads, n, d, channels=None, kernel=5, groups=4, dtype=np.float32):
        self.spatial = normal_param(rng, (leads, d), 0.02, dtype)
        self.temporal = normal_param(rng, (n, d), 0.02, dtype)
        self.tokenizer = PatchTokenizer(rng, d, channels, kernel, groups, dtype)

    @property
    def dim(self):
        return self.spatial.shape[1]

    def position_grid(self):
        """(L*N, d) grid of spa_l + temp_n in lead-major order."""
        leads, d = self.spatial.shape
        n = self.temporal.shape[0]
        grid = nx.reshape(self.spatial, (leads, 1, d)) + nx.reshape(self.temporal, (1, n, d))
        return nx.reshape(grid, (leads * n, d))


def tokenize(grid, table):
    """Token embeddings temp_n + spa_l + W(patch), shape (B, L*N, d) (or (L*N, d) unbatched)."""
    p = np.asarray(grid.patches)
    unbatched = p.ndim == 3
    if unbatched:
        p = p[None]
    b, leads, n, plen = p.shape
    if table.spatial.shape[0] != leads or table.temporal.shape[0] != n:
        raise ValueError(
            f"embedding table is {table.spatial.shape[0]} leads x {table.temporal.shape[0]} patches, "
            f"grid is {leads} x {n}"
        )
    dtype = table.spatial.dtype
    x = nx.Tensor._wrap(np.ascontiguousarray(p.reshape(b * leads * n, plen), dtype=dtype))
    tok = nx.reshape(table.tokenizer(x), (b, leads * n, table.dim))
    out = tok + table.position_grid()
    return nx.reshape(out, (leads * n, table.dim)) if unbatched else out
