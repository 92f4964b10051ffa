"""Word-level vocabulary, sentinel masking, and the masked-report model."""

from dataclasses import dataclass
import re

import numpy as np

from . import numerics as nx
from .ecg_tokenizer import round_half_away
from .nn import Block, LayerNorm, Linear, Module, normal_param

PAD, BOS, EOS, SENTINEL, UNK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<mask>")
UNK_TOKEN = "<unk>"

_WORD = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def split_words(text):
    return _WORD.findall(text.lower())


class Vocab:
    """Dense token ids; the four special tokens occupy ids 0-3, <unk> is id 4."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIAL_TOKENS or tokens[4] != UNK_TOKEN:
            raise ValueError(f"vocab must start with {SPECIAL_TOKENS + (UNK_TOKEN,)}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocab contains duplicate tokens")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, texts, min_count=1):
        counts = {}
        for text in texts:
            for w in split_words(text):
                counts[w] = counts.get(w, 0) + 1
        words = sorted(w for w, c in counts.items() if c >= min_count)
        return cls(list(SPECIAL_TOKENS) + [UNK_TOKEN] + words)

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode_words(self, text):
        return [self.index.get(w, UNK) for w in split_words(text)]

    def decode(self, ids):
        words = [self.tokens[i] for i in ids if i not in (PAD, BOS, EOS)]
        out = ""
        for w in words:
            if out and (w[0].isalnum() or w.startswith("<")):
                out += " "
            out += w
        return out

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh])


def normalize_text(text):
    return " ".join(split_words(text))


def tokenize_text(report, vocab, max_len):
    """BOS + word ids + EOS, truncated and right-padded to ``max_len``.

    An empty report encodes as a lone EOS.
    """
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    words = vocab.encode_words(report)
    seq = [EOS] if not words else [BOS] + words[: max_len - 2] + [EOS]
    return np.array(seq + [PAD] * (max_len - len(seq)), dtype=np.int64)


@dataclass
class MaskedText:
    corrupted: np.ndarray
    masked_ids: np.ndarray
    masked_positions: np.ndarray


def mask_text(ids, rate=0.15, seed=0):
    """Replace round(rate * n) (at least one) maskable tokens with SENTINEL."""
    ids = np.asarray(ids, dtype=np.int64)
    maskable = np.flatnonzero(~np.isin(ids, (PAD, BOS, EOS)))
    if maskable.size == 0:
        raise ValueError("sequence has no maskable tokens")
    k = max(1, round_half_away(rate * maskable.size))
    rng = np.random.default_rng(seed)
    pos = np.sort(rng.choice(maskable, size=k, replace=False))
    corrupted = ids.copy()
    corrupted[pos] = SENTINEL
    return MaskedText(corrupted, ids[pos].copy(), pos)


@dataclass
class TextBatch:
    """Padded batch of masked reports for the decoder."""

    corrupted: np.ndarray  # (B, S)
    positions: np.ndarray  # (B, K) masked positions, left to right, padded with 0
    targets: np.ndarray  # (B, K) ground-truth ids, padded with PAD
    valid: np.ndarray  # (B, K) bool

    @classmethod
    def from_masked(cls, items):
        b = len(items)
        k = max(len(m.masked_positions) for m in items)
        pos = np.zeros((b, k), dtype=np.int64)
        tgt = np.full((b, k), PAD, dtype=np.int64)
        valid = np.zeros((b, k), dtype=bool)
        for i, m in enumerate(items):
            n = len(m.masked_positions)
            pos[i, :n] = m.masked_positions
            tgt[i, :n] = m.masked_ids
            valid[i, :n] = True
        return cls(np.stack([m.corrupted for m in items]), pos, tgt, valid)


class TextMAE(Module):
    """Transformer encoder over the corrupted report; causal decoder over masked slots."""

    def __init__(self, rng, vocab_size, max_len, d, heads, d_ff, enc_layers=2, dec_layers=2, dropout=0.0,
                 dtype=np.float32):
        self._d = d
        self.tok_emb = normal_param(rng, (vocab_size, d), 0.02, dtype)
        self.pos_emb = normal_param(rng, (max_len, d), 0.02, dtype)
        self.encoder = [Block(rng, d, heads, d_ff, dropout=dropout, dtype=dtype) for _ in range(enc_layers)]
        self.decoder = [Block(rng, d, heads, d_ff, cross=True, dropout=dropout, dtype=dtype)
                        for _ in range(dec_layers)]
        self.decoder_norm = LayerNorm(d, dtype)
        self.head = Linear(rng, d, vocab_size, dtype=dtype)

    @property
    def dim(self):
        return self._d

    def embed(self, ids):
        ids = np.asarray(ids)
        s = ids.shape[1]
        return nx.take(self.tok_emb, ids, axis=0) + nx.getitem(self.pos_emb, slice(0, s))

    def encode(self, ids, rng=None):
        ids = np.asarray(ids)
        valid = ids != PAD
        h = self.embed(ids)
        for blk in self.encoder:
            h = blk(h, key_valid=valid, rng=rng)
        return h, valid

    def decode_logits(self, batch: TextBatch, rng=None):
        """Teacher-forced logits (B, K, V) for the masked tokens in left-to-right order."""
        enc, enc_valid = self.encode(batch.corrupted, rng)
        prev = np.concatenate([np.full((batch.targets.shape[0], 1), BOS), batch.targets[:, :-1]], axis=1)
        h = nx.take(self.tok_emb, prev, axis=0) + nx.take(self.pos_emb, batch.positions, axis=0)
        for blk in self.decoder:
            h = blk(h, key_valid=batch.valid, causal=True, context=enc, context_valid=enc_valid, rng=rng)
        return self.head(self.decoder_norm(h))

    def pooled(self, ids, rng=None):
        """Mean encoder output over non-PAD positions of the uncorrupted sequence."""
        h, valid = self.encode(ids, rng)
        w = valid / valid.sum(axis=1, keepdims=True)
        return nx.sum_(h * nx.Tensor._wrap(w[:, :, None].astype(h.dtype)), axis=1)


def reconstruction_nll(logits, targets, valid):
    """-(1/B) sum_j (1/|M_j|) sum_m log P(t_jm); ``valid`` marks real slots."""
    targets = np.asarray(targets)
    valid = np.asarray(valid, dtype=bool)
    b = targets.shape[0]
    counts = valid.sum(axis=1)
    if (counts == 0).any():
        raise ValueError("reconstruction_nll: a sample has no masked tokens")
    w = (valid / (b * counts[:, None])).astype(logits.dtype)
    nll = nx.softmax_cross_entropy(logits, np.where(valid, targets, 0))
    return nx.sum_(nll * nx.Tensor._wrap(w))


def loss_t_rec(model, batch: TextBatch, rng=None):
    seq_len = batch.corrupted.shape[1]
    if (batch.positions[batch.valid] >= seq_len).any() or (batch.positions < 0).any():
        raise ValueError("masked position outside the sequence")
    return reconstruction_nll(model.decode_logits(batch, rng), batch.targets, batch.valid)


def pooled_text_representation(model, ids, rng=None):
    return model.pooled(np.atleast_2d(ids), rng)
