"""Model assembly, the joint training step, checkpoints and metrics logging."""

from dataclasses import asdict, dataclass, field, fields
import csv
import json
import math
import os
import struct

import numpy as np

from . import numerics as nx
from .align import AlignConfig, LossReport, loss_full, loss_infonce, loss_siglip, similarity
from .disentangle import HeadSet, loss_orth, project
from .ecg_mae import ECGMAE, EncoderConfig, loss_e_rec
from .ecg_tokenizer import masked_per_lead, select_mask
from .nn import Module
from .text_mae import TextBatch, TextMAE, Vocab, loss_t_rec, mask_text, tokenize_text

METRICS_HEADER = ["step", "lr", "e_rec", "t_rec", "orth", "siglip", "cons", "full"]


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    leads: int = 12
    length: int = 250
    n_patches: int = 10
    d: int = 32
    d_proj: int = 32
    heads: int = 4
    d_ff: int = 64
    ecg_layers: int = 2
    ecg_decoder_layers: int = 1
    tokenizer_channels: list = field(default_factory=lambda: [8, 32])
    groups: int = 4
    kernel: int = 5
    text_layers: int = 1
    text_decoder_layers: int = 1
    max_len: int = 24
    text_mask_rate: float = 0.15
    mask_ratio: float = 0.75
    tau: float = 0.07
    lambda0: float = 1.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    infonce_mode: str = "standard"
    lr_max: float = 2e-3
    lr_min: float = 0.0
    weight_decay: float = 1e-5
    warmup_steps: int = 0
    grad_clip: float = 0.0
    dropout: float = 0.0
    dataset: str = ""
    output_dir: str = ""

    def __post_init__(self):
        if self.tokenizer_channels is not None:
            self.tokenizer_channels = [int(c) for c in self.tokenizer_channels]

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ValueError(msg)

        need(self.epochs >= 1, "epochs must be at least 1")
        need(self.batch_size >= 1, "batch_size must be at least 1")
        need(self.n_patches >= 1 and self.length % self.n_patches == 0,
             f"length {self.length} is not divisible by n_patches {self.n_patches}")
        need(self.d % self.heads == 0, f"d={self.d} is not divisible by heads={self.heads}")
        masked_per_lead(self.n_patches, self.mask_ratio)
        need(0.0 < self.text_mask_rate < 1.0, "text_mask_rate must lie in (0, 1)")
        need(self.max_len >= 3, "max_len must be at least 3")
        need(0.0 <= self.dropout < 1.0, "dropout must lie in [0, 1)")
        need(self.warmup_steps >= 0 and self.grad_clip >= 0, "warmup_steps and grad_clip must be nonnegative")
        need(self.lr_max > 0 and 0 <= self.lr_min <= self.lr_max, "need 0 <= lr_min <= lr_max, lr_max > 0")
        need(self.weight_decay >= 0, "weight_decay must be nonnegative")
        self.align_config()
        return self

    def align_config(self):
        return AlignConfig(self.tau, self.lambda0, self.lambda1, self.lambda2, self.lambda3, self.infonce_mode)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return TrainConfig.from_dict(d)


class CGDMER(Module):
    """ECG masked autoencoder, text masked autoencoder, and the four projection heads."""

    def __init__(self, config: TrainConfig, vocab_size, dtype=np.float32):
        c = config
        rng = np.random.default_rng([c.seed, 0xC0DE])
        enc = EncoderConfig(c.ecg_layers, c.heads, c.d, c.d_ff, c.dropout)
        self.ecg = ECGMAE(rng, c.leads, c.n_patches, c.length // c.n_patches, enc, c.ecg_decoder_layers,
                          c.tokenizer_channels, c.groups, c.kernel, dtype)
        self.text = TextMAE(rng, vocab_size, c.max_len, c.d, c.heads, c.d_ff, c.text_layers,
                            c.text_decoder_layers, c.dropout, dtype)
        self.heads = HeadSet(rng, c.d, c.d_proj, dtype)

    def ecg_embeddings(self, ecg):
        """(shared, specific) projections of the mask-free pooled ECG representation."""
        pair = project(self.ecg.pooled_representation(np.asarray(ecg, dtype=self.dtype)), self.heads, "ecg")
        return pair.shared, pair.specific

    def text_embeddings(self, ids):
        pair = project(self.text.pooled(ids), self.heads, "text")
        return pair.shared, pair.specific

    @property
    def dtype(self):
        return self.heads.ecg_sh.fc1.weight.dtype


def analytic_parameter_count(c: TrainConfig, vocab_size):
    """Closed-form count for the configured dims; the registry must agree."""
    d, f, p = c.d, c.d_ff, c.length // c.n_patches

    def block(cross):
        n = 2 * 2 * d  # two layer norms
        attn = 4 * d * d + 3 * d  # q, k, v, out; keys have no bias
        n += attn + d * f + f + f * d + d
        if cross:
            n += 2 * d + attn
        return n

    chans = c.tokenizer_channels or [d // 2, d]
    tok, cin = 0, 1
    for cout in chans:
        tok += cout * cin * c.kernel + cout + 2 * cout
        cin = cout
    ecg = c.leads * d + c.n_patches * d + tok
    ecg += (c.ecg_layers + c.ecg_decoder_layers) * block(False) + d + 2 * d + d * p + p
    text = vocab_size * d + c.max_len * d + c.text_layers * block(False) + c.text_decoder_layers * block(True)
    text += 2 * d + d * vocab_size + vocab_size
    heads = 4 * (d * d + d + d * c.d_proj + c.d_proj)
    return ecg + text + heads


# ---------------------------------------------------------------------------
# one step
# ---------------------------------------------------------------------------


class NonFiniteLoss(FloatingPointError):
    def __init__(self, term, batch_ids):
        self.term = term
        self.batch_ids = list(batch_ids)
        super().__init__(f"non-finite {term} loss on batch {self.batch_ids}")


@dataclass
class Batch:
    ids: list
    ecg: np.ndarray  # (B, L, T)
    tokens: np.ndarray  # (B, S) uncorrupted text ids


def make_batch(records, vocab, max_len, dtype=np.float32):
    return Batch(
        [r.id for r in records],
        np.stack([r.ecg for r in records]).astype(dtype),
        np.stack([tokenize_text(r.report, vocab, max_len) for r in records]),
    )


def _seed(config, step, index, stream):
    return [config.seed, step, index, stream]


def _term(enabled, fn):
    if enabled:
        return fn()
    with nx.no_grad():
        return fn()


def compute_losses(model, batch: Batch, config: TrainConfig, step):
    """Every loss term on one batch; weighted-out terms are evaluated without a graph."""
    acfg = config.align_config()
    b = len(batch.ids)
    drop_rng = np.random.default_rng(_seed(config, step, 0, 2)) if config.dropout > 0 else None
    masks = [select_mask(config.leads, config.n_patches, config.mask_ratio, _seed(config, step, i, 0))
             for i in range(b)]
    texts = [mask_text(batch.tokens[i], config.text_mask_rate, _seed(config, step, i, 1)) for i in range(b)]
    tb = TextBatch.from_masked(texts)

    tokens = model.ecg.tokens(batch.ecg)

    def e_rec():
        out = model.ecg.masked_forward(batch.ecg, masks, drop_rng, tokens=tokens)
        return loss_e_rec(out.reconstructed_patches, model.ecg.patch_targets(batch.ecg, out.masked_index))

    terms = {
        "e_rec": _term(acfg.lambda0 > 0, e_rec),
        "t_rec": _term(acfg.lambda1 > 0, lambda: loss_t_rec(model.text, tb, drop_rng)),
    }
    ep = project(model.ecg.pooled_representation(batch.ecg, drop_rng, tokens=tokens), model.heads, "ecg")
    tp = project(model.text.pooled(batch.tokens, drop_rng), model.heads, "text")
    terms["orth"] = _term(acfg.lambda2 > 0, lambda: loss_orth(ep, tp))
    he, ht = nx.l2_normalize(ep.shared), nx.l2_normalize(tp.shared)
    terms["siglip"] = _term(acfg.lambda3 > 0, lambda: loss_siglip(he, ht))
    terms["cons"] = loss_infonce(similarity(he, ht), acfg.tau, acfg.infonce_mode)
    for name, t in terms.items():
        if not np.isfinite(t.item()):
            raise NonFiniteLoss(name, batch.ids)
    terms["full"] = loss_full(terms["cons"], terms["e_rec"], terms["t_rec"], terms["orth"], terms["siglip"], acfg)
    if not np.isfinite(terms["full"].item()):
        raise NonFiniteLoss("full", batch.ids)
    return terms


def learning_rate(step, config: TrainConfig, opt: nx.OptimizerState):
    lr = nx.cosine_lr(step, opt)
    if config.warmup_steps and step < config.warmup_steps:
        lr *= (step + 1) / config.warmup_steps
    return lr


def train_step(model, opt: nx.OptimizerState, batch: Batch, config: TrainConfig):
    """Forward all terms, one backward pass on L_Full, one AdamW update."""
    step = opt.t
    terms = compute_losses(model, batch, config, step)
    params = model.parameters()
    grads = nx.backward(terms["full"], wrt=params)
    if config.grad_clip > 0:
        norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads))
        if norm > config.grad_clip:
            grads = [g * (config.grad_clip / norm) for g in grads]
    lr = learning_rate(step, config, opt)
    nx.adamw_step(params, grads, opt, lr=lr)
    for p in params:
        p.grad = None
    report = LossReport(**{k: float(v.item()) for k, v in terms.items()})
    return report, lr


# ---------------------------------------------------------------------------
# state and checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"CGDM"
CHECKPOINT_VERSION = 1
_DTYPES = {0: np.dtype("<f4")}


class CheckpointError(ValueError):
    pass


@dataclass
class TrainState:
    config: TrainConfig
    vocab: Vocab
    model: CGDMER
    opt: nx.OptimizerState
    step: int = 0
    rng_state: dict = field(default_factory=dict)


def init_state(config: TrainConfig, vocab: Vocab, steps_per_epoch):
    config.validate()
    model = CGDMER(config, len(vocab))
    opt = nx.OptimizerState.for_params(
        model.parameters(), lr_max=config.lr_max, lr_min=config.lr_min,
        weight_decay=config.weight_decay, total_steps=max(1, config.epochs * steps_per_epoch),
    )
    return TrainState(config, vocab, model, opt, 0, {"seed": config.seed, "step": 0})


def _blob(data):
    return struct.pack("<Q", len(data)) + data


def _array_bytes(a):
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def save_checkpoint(state: TrainState, path):
    """Little-endian binary: magic, version, total size, JSON sections, tensors."""
    named = state.model.named_parameters()
    body = bytearray()
    body += _blob(state.config.to_json().encode())
    body += _blob("\n".join(state.vocab.tokens).encode())
    body += struct.pack("<I", len(named))
    for name, p in named:
        nb = name.encode()
        body += struct.pack("<H", len(nb)) + nb + struct.pack("<BB", 0, p.ndim)
        body += struct.pack(f"<{p.ndim}I", *p.shape) + _array_bytes(p.data)
    opt = state.opt
    hyper = {"lr_max": opt.lr_max, "lr_min": opt.lr_min, "weight_decay": opt.weight_decay,
             "betas": list(opt.betas), "eps": opt.eps, "total_steps": opt.total_steps}
    body += _blob(json.dumps(hyper).encode()) + struct.pack("<Q", opt.t)
    for arrays in (opt.m, opt.v):
        for a in arrays:
            body += _array_bytes(a)
    body += struct.pack("<Q", state.step)
    body += _blob(json.dumps(state.rng_state, sort_keys=True).encode())
    total = len(MAGIC) + 4 + 8 + len(body)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, total) + bytes(body))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"checkpoint truncated: need {self.pos + n} bytes, file has {len(self.buf)}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self):
        (n,) = self.unpack("<Q")
        return self.take(n)

    def array(self, shape):
        n = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(buf) < 16:
        raise CheckpointError(f"checkpoint truncated: expected at least 16 bytes, file has {len(buf)}")
    version, total = struct.unpack("<IQ", buf[4:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (this build reads {CHECKPOINT_VERSION})")
    if len(buf) != total:
        raise CheckpointError(f"checkpoint truncated: expected {total} bytes, file has {len(buf)}")
    r = _Reader(buf)
    r.pos = 16
    config = TrainConfig.from_json(r.blob().decode())
    vocab = Vocab(r.blob().decode().split("\n"))
    model = CGDMER(config, len(vocab))
    (count,) = r.unpack("<I")
    state = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise CheckpointError(f"parameter {name}: unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        state[name] = r.array(shape)
    model.load_state_dict(state)
    hyper = json.loads(r.blob().decode())
    hyper["betas"] = tuple(hyper["betas"])
    (t,) = r.unpack("<Q")
    params = model.parameters()
    m = [r.array(p.shape) for p in params]
    v = [r.array(p.shape) for p in params]
    opt = nx.OptimizerState(m=m, v=v, t=t, **hyper)
    (step,) = r.unpack("<Q")
    rng_state = json.loads(r.blob().decode())
    return TrainState(config, vocab, model, opt, step, rng_state)


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------


def epoch_order(config: TrainConfig, epoch, n):
    return np.random.default_rng([config.seed, epoch, 3]).permutation(n)


def batches_per_epoch(n, batch_size):
    return max(1, math.ceil(n / batch_size))


def build_vocab(records):
    return Vocab.build(r.report for r in records)


def _format(v):
    return repr(float(v))


class MetricsLog:
    def __init__(self, path, append=False):
        self.path = path
        exists = append and os.path.exists(path)
        self._fh = open(path, "a" if exists else "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, lineterminator="\n")
        if not exists:
            self._w.writerow(METRICS_HEADER)

    def write(self, step, lr, report: LossReport):
        r = report
        self._w.writerow([step, _format(lr)] + [_format(x) for x in (r.e_rec, r.t_rec, r.orth, r.siglip, r.cons, r.full)])
        self._fh.flush()

    def close(self):
        self._fh.close()


def fit(config: TrainConfig, records, out_dir=None, state=None, max_steps=None, on_step=None,
        checkpoint_every=0):
    """Train from scratch (or resume ``state``) over ``records``.

    Writes metrics.csv, epochs.json and checkpoint.bin into ``out_dir`` when
    given.  ``max_steps`` stops early (used to exercise mid-epoch resume).
    """
    n = len(records)
    per_epoch = batches_per_epoch(n, config.batch_size)
    if state is None:
        state = init_state(config, build_vocab(records), per_epoch)
    config = state.config
    metrics = summaries = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        sums = _replay_metrics(os.path.join(out_dir, "metrics.csv"), state.step, per_epoch)
        metrics = MetricsLog(os.path.join(out_dir, "metrics.csv"), append=state.step > 0)
        state.vocab.save(os.path.join(out_dir, "vocab.txt"))
        summaries = _load_summaries(os.path.join(out_dir, "epochs.json")) if state.step > 0 else []
        summaries = [s for s in summaries if s["epoch"] < state.step // per_epoch]
    else:
        sums = {}
    total = config.epochs * per_epoch
    try:
        while state.step < total:
            if max_steps is not None and state.step >= max_steps:
                break
            epoch, pos = divmod(state.step, per_epoch)
            order = epoch_order(config, epoch, n)
            idx = order[pos * config.batch_size : (pos + 1) * config.batch_size]
            batch = make_batch([records[i] for i in idx], state.vocab, config.max_len)
            report, lr = train_step(state.model, state.opt, batch, config)
            if metrics:
                metrics.write(state.step, lr, report)
            for k, v in report.as_dict().items():
                sums.setdefault(epoch, {}).setdefault(k, []).append(v)
            state.step += 1
            state.rng_state = {"seed": config.seed, "step": state.step}
            if on_step:
                on_step(state, report)
            if out_dir and checkpoint_every and state.step % checkpoint_every == 0:
                save_checkpoint(state, os.path.join(out_dir, "checkpoint.bin"))
            if state.step % per_epoch == 0 and summaries is not None:
                summaries.append({"epoch": epoch, "steps": len(sums[epoch]["full"]),
                                  **{k: float(np.mean(v)) for k, v in sums[epoch].items()}})
                with open(os.path.join(out_dir, "epochs.json"), "w") as fh:
                    json.dump(summaries, fh, indent=1)
    finally:
        if metrics:
            metrics.close()
    if out_dir:
        save_checkpoint(state, os.path.join(out_dir, "checkpoint.bin"))
    state.epoch_means = {e: {k: float(np.mean(v)) for k, v in s.items()} for e, s in sums.items()}
    return state


def _replay_metrics(path, step, per_epoch):
    """Drop rows past ``step`` and return the current epoch's logged terms."""
    if step == 0 or not os.path.exists(path):
        return {}
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    kept = [r for r in rows[1:] if int(r[0]) < step]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows[:1] + kept)
    epoch = step // per_epoch
    sums = {}
    for r in kept:
        if int(r[0]) // per_epoch == epoch:
            for k, v in zip(METRICS_HEADER[2:], r[2:]):
                sums.setdefault(epoch, {}).setdefault(k, []).append(float(v))
    return sums


def _load_summaries(path):
    if os.path.exists(path):
        with open(path) as fh:
            return json.load(fh)
    return []
