"""Random gradient-check instances for every loss term, in 64-bit mode."""

import numpy as np

from .. import numerics as nx
from ..align import loss_infonce, loss_siglip, similarity
from ..corpus import generate
from ..disentangle import DisentangledPair, loss_orth
from ..ecg_mae import loss_e_rec
from ..numerics import Tensor
from ..text_mae import TextBatch, TextMAE, Vocab, loss_t_rec, mask_text, tokenize_text

TINY = dict(
    leads=3, length=40, n_patches=4, d=8, d_proj=8, heads=2, d_ff=16, ecg_layers=1, ecg_decoder_layers=1,
    tokenizer_channels=[4, 8], groups=2, text_layers=1, text_decoder_layers=1, max_len=12, batch_size=4,
)


def _leaf(rng, shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _rescale(module, rng, scale=0.4):
    """Larger-than-init weights so no gradient is lost under the 1e-8 error floor."""
    for name, p in module.named_parameters():
        p.data = rng.uniform(-scale, scale, size=p.shape) + (1.0 if name.endswith("gamma") else 0.0)


def _e_rec(rng):
    b, m, p = (int(v) for v in rng.integers(1, 5, size=3))
    pred = _leaf(rng, (b, m, p))
    target = rng.normal(size=(b, m, p))
    valid = rng.random((b, m)) < 0.7
    valid[np.arange(b), rng.integers(0, m, size=b)] = True
    return (lambda: loss_e_rec(pred, target, valid)), [pred], None


def _orth(rng):
    b, d = int(rng.integers(1, 5)), int(rng.integers(2, 6))
    leaves = [_leaf(rng, (b, d)) for _ in range(4)]

    def fn():
        return loss_orth(DisentangledPair(leaves[0], leaves[1], "ecg"), DisentangledPair(leaves[2], leaves[3], "text"))

    return fn, leaves, None


def _siglip(rng):
    b, d = int(rng.integers(1, 5)), int(rng.integers(2, 6))
    e, t = _leaf(rng, (b, d)), _leaf(rng, (b, d))
    return (lambda: loss_siglip(nx.l2_normalize(e), nx.l2_normalize(t))), [e, t], None


def _cons(rng):
    b, d = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    tau = float(rng.uniform(0.07, 1.0))
    e, t = _leaf(rng, (b, d)), _leaf(rng, (b, d))
    return (lambda: loss_infonce(similarity(nx.l2_normalize(e), nx.l2_normalize(t)), tau)), [e, t], None


_WORDS = "sinus rhythm normal fast slow irregular rate beat".split()


def _text_batch(rng, b, max_len):
    reports = [" ".join(rng.choice(_WORDS, size=int(rng.integers(2, max_len - 2)))) for _ in range(b)]
    vocab = Vocab.build(_WORDS)
    ids = np.stack([tokenize_text(r, vocab, max_len) for r in reports])
    masked = [mask_text(ids[i], 0.3, int(rng.integers(1 << 30))) for i in range(b)]
    return vocab, ids, TextBatch.from_masked(masked)


def _t_rec(rng):
    vocab, _, batch = _text_batch(rng, int(rng.integers(1, 4)), 10)
    model = TextMAE(rng, len(vocab), 10, 8, 2, 16, 1, 1, dtype=np.float64)
    _rescale(model, rng)
    return (lambda: loss_t_rec(model, batch)), model.parameters(), 3


def _full(rng):
    from ..train import CGDMER, TrainConfig, compute_losses, make_batch

    cfg = TrainConfig(seed=int(rng.integers(1 << 30)), **TINY)
    records = generate(cfg.batch_size, cfg.seed, leads=cfg.leads, length=cfg.length, sample_rate=10.0)
    vocab = Vocab.build(r.report for r in records)
    model = CGDMER(cfg, len(vocab), dtype=np.float64)
    _rescale(model, rng)
    batch = make_batch(records, vocab, cfg.max_len, dtype=np.float64)
    params = model.parameters()
    total = sum(p.size for p in params)
    # a 1% sample of all scalar parameters, at least one coordinate per check
    pick = rng.choice(total, size=max(8, total // 100), replace=False)
    return (lambda: compute_losses(model, batch, cfg, 0)["full"]), params, np.sort(pick)


LOSSES = {
    "e_rec": _e_rec,
    "t_rec": _t_rec,
    "orth": _orth,
    "siglip": _siglip,
    "cons": _cons,
    "full": _full,
}


def _check_sampled(fn, params, flat_pick, h, tol):
    """grad_check over a set of flat coordinates spanning the concatenated parameters."""
    offsets = np.cumsum([0] + [p.size for p in params])
    worst = None
    for k, p in enumerate(params):
        sel = flat_pick[(flat_pick >= offsets[k]) & (flat_pick < offsets[k + 1])] - offsets[k]
        if sel.size == 0:
            continue
        res = nx.grad_check(fn, p, h=h, tol=tol, indices=sel)
        if worst is None or res.max_rel_err > worst.max_rel_err:
            worst = res
    return worst


def check_loss(name, instances=20, seed=0, h=1e-5, tol=1e-4):
    """Worst grad_check result over ``instances`` random small problems."""
    build = LOSSES[name]
    rng = np.random.default_rng([seed, sum(map(ord, name)), 7])
    worst = None
    for _ in range(instances):
        fn, leaves, sample = build(rng)
        if sample is None:
            res = nx.grad_check_many(fn, leaves, h=h, tol=tol)
        elif isinstance(sample, int):
            res = nx.grad_check_many(fn, leaves, h=h, tol=tol, max_coords=sample, rng=rng)
        else:
            res = _check_sampled(fn, leaves, sample, h, tol)
        if worst is None or res.max_rel_err > worst.max_rel_err:
            worst = res
    return worst
