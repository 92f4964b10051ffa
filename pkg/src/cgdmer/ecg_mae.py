"""Masked autoencoder over lead-by-patch ECG tokens."""

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .ecg_tokenizer import EmbeddingTable, patchify, select_mask, tokenize
from .nn import Block, LayerNorm, Linear, Module, normal_param


@dataclass
class EncoderConfig:
    layers: int = 4
    heads: int = 4
    d: int = 128
    d_ff: int = 256
    dropout: float = 0.0

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"model dim {self.d} not divisible by {self.heads} heads")
        if self.layers < 0:
            raise ValueError("layer count must be nonnegative")


@dataclass
class MaskedForwardOutput:
    visible_encodings: nx.Tensor  # (B, V, d)
    reconstructed_patches: nx.Tensor  # (B, M, P)
    masked_index: np.ndarray  # (B, M) lead-major flat positions
    visible_index: np.ndarray  # (B, V)
    pooled: nx.Tensor = None


class ECGMAE(Module):
    def __init__(
        self,
        rng,
        leads,
        n_patches,
        patch_len,
        encoder: EncoderConfig,
        decoder_layers=2,
        tokenizer_channels=None,
        groups=4,
        kernel=5,
        dtype=np.float32,
    ):
        d = encoder.d
        self._cfg = encoder
        self._shape = (leads, n_patches, patch_len)
        self.table = EmbeddingTable(rng, leads, n_patches, d, tokenizer_channels, kernel, groups, dtype)
        self.encoder = [Block(rng, d, encoder.heads, encoder.d_ff, dropout=encoder.dropout, dtype=dtype)
                        for _ in range(encoder.layers)]
        self.mask_token = normal_param(rng, (d,), 0.02, dtype)
        self.decoder = [Block(rng, d, encoder.heads, encoder.d_ff, dropout=encoder.dropout, dtype=dtype)
                        for _ in range(decoder_layers)]
        self.decoder_norm = LayerNorm(d, dtype)
        self.head = Linear(rng, d, patch_len, dtype=dtype)

    @property
    def dim(self):
        return self._cfg.d

    def tokens(self, ecg):
        """(B, L, T) signals -> (B, L*N, d) token embeddings."""
        return tokenize(patchify(ecg, self._shape[1]), self.table)

    def _run(self, blocks, x, rng=None):
        for blk in blocks:
            x = blk(x, rng=rng)
        return x

    def encode_visible(self, tokens, masks, rng=None):
        """Encode only unmasked tokens, in lead-major order. Returns (encodings, visible_index)."""
        vis = np.stack([m.flat_visible() for m in masks])
        if vis.shape[1] == 0:
            raise ValueError("mask leaves no visible tokens")
        if tokens.shape[1] != masks[0].mask.size:
            raise ValueError(f"token grid of {tokens.shape[1]} does not match mask of {masks[0].mask.size}")
        x = nx.gather_rows(tokens, vis)
        return self._run(self.encoder, x, rng), vis

    def decode_and_reconstruct(self, encodings, visible_index, masks, rng=None):
        """Predict every masked patch from visible encodings plus the shared mask embedding."""
        b, v, d = encodings.shape
        masked = np.stack([m.flat_masked() for m in masks])
        m = masked.shape[1]
        pos = nx.take(self.table.position_grid(), masked, axis=0)  # (B, M, d)
        fill = pos + nx.reshape(self.mask_token, (1, 1, d))
        seq = nx.concat([encodings, fill], axis=1)  # (B, V+M, d) in [visible, masked] order
        order = np.concatenate([visible_index, masked], axis=1)
        restore = np.argsort(order, axis=1, kind="stable")
        full = nx.gather_rows(seq, restore)  # lead-major (B, L*N, d)
        h = self.decoder_norm(self._run(self.decoder, full, rng))
        out = self.head(nx.gather_rows(h, masked))
        return out, masked

    def masked_forward(self, ecg, masks, rng=None, tokens=None):
        if tokens is None:
            tokens = self.tokens(ecg)
        enc, vis = self.encode_visible(tokens, masks, rng)
        pred, masked = self.decode_and_reconstruct(enc, vis, masks, rng)
        return MaskedForwardOutput(enc, pred, masked, vis)

    def pooled_representation(self, ecg, rng=None, tokens=None):
        """Mean of encoder outputs over all L*N tokens of a mask-free pass."""
        if tokens is None:
            tokens = self.tokens(ecg)
        return nx.mean(self._run(self.encoder, tokens, rng), axis=1)

    def patch_targets(self, ecg, masked_index):
        p = patchify(ecg, self._shape[1]).patches
        b = p.shape[0]
        flat = p.reshape(b, -1, p.shape[-1])
        return np.take_along_axis(flat, masked_index[:, :, None], axis=1)


def loss_e_rec(pred, target, valid=None, pred_keys=None, target_keys=None):
    """Mean over samples of the per-sample mean squared L2 patch error.

    ``pred`` (B, M, P) Tensor, ``target`` (B, M, P) array.  ``valid`` (B, M)
    marks real entries when samples carry different numbers of masked
    patches.  Keys, when given, must agree element-wise.
    """
    if pred_keys is not None or target_keys is not None:
        if pred_keys is None or target_keys is None or not np.array_equal(pred_keys, target_keys):
            raise ValueError("loss_e_rec: prediction and target keys are misaligned")
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"loss_e_rec: prediction shape {pred.shape} vs target {target.shape}")
    b, m = pred.shape[:2]
    valid = np.ones((b, m), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    counts = valid.sum(axis=1)
    if (counts == 0).any():
        raise ValueError("loss_e_rec: a sample has no masked patches")
    w = (valid / (b * counts[:, None])).astype(pred.dtype)
    d2 = nx.sq_l2_distance(pred, nx.Tensor._wrap(target))
    return nx.sum_(d2 * nx.Tensor._wrap(w))


def masks_for_batch(leads, n, r, seeds):
    return [select_mask(leads, n, r, s) for s in seeds]
