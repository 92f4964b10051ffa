"""Shared / specific projection heads and the orthogonality penalty."""

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .nn import Linear, Module

MODALITIES = ("ecg", "text")


class ProjectionHead(Module):
    """d -> d -> d_proj with GELU between the two layers."""

    def __init__(self, rng, d, d_proj, dtype=np.float32):
        self._d = d
        self.fc1 = Linear(rng, d, d, dtype=dtype)
        self.fc2 = Linear(rng, d, d_proj, dtype=dtype)

    def __call__(self, x):
        if x.shape[-1] != self._d:
            raise ValueError(f"projection head expects dimension {self._d}, got {x.shape[-1]}")
        return self.fc2(nx.gelu(self.fc1(x)))


class HeadSet(Module):
    """Four independent heads: specific and shared, per modality."""

    def __init__(self, rng, d, d_proj, dtype=np.float32):
        self.ecg_sp = ProjectionHead(rng, d, d_proj, dtype)
        self.ecg_sh = ProjectionHead(rng, d, d_proj, dtype)
        self.text_sp = ProjectionHead(rng, d, d_proj, dtype)
        self.text_sh = ProjectionHead(rng, d, d_proj, dtype)

    def pair(self, modality):
        if modality not in MODALITIES:
            raise ValueError(f"unknown modality {modality!r}")
        return getattr(self, modality + "_sp"), getattr(self, modality + "_sh")


@dataclass
class DisentangledPair:
    specific: nx.Tensor
    shared: nx.Tensor
    modality: str


def project(pooled, heads: HeadSet, modality):
    sp, sh = heads.pair(modality)
    return DisentangledPair(sp(pooled), sh(pooled), modality)


def loss_orth(ecg: DisentangledPair, text: DisentangledPair):
    """(1/B) sum_i [cos(sp, sh)^2 for text + for ECG]; near-zero vectors count as cos 0."""
    if ecg.specific.shape[0] != text.specific.shape[0]:
        raise ValueError("loss_orth: modality batch sizes differ")
    total = None
    for pair in (text, ecg):
        c = nx.cosine_similarity(pair.specific, pair.shared)
        term = nx.mean(nx.square(c))
        total = term if total is None else total + term
    return total
