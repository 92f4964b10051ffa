"""Macro AUC, linear probing on frozen features, and prompt-based zero-shot scoring."""

from dataclasses import dataclass
import hashlib
import json
import warnings

import numpy as np

from . import numerics as nx
from .numerics import kernels
from .text_mae import tokenize_text

PROBE_FRACTIONS = (0.01, 0.1, 1.0)
FEATURE_KINDS = ("shared", "pooled", "concat")


@dataclass
class AUCResult:
    per_class: dict  # class index -> AUC
    macro: float
    skipped: list  # classes lacking positives or negatives


def one_hot(labels, n_classes):
    out = np.zeros((len(labels), n_classes), dtype=np.int64)
    out[np.arange(len(labels)), np.asarray(labels)] = 1
    return out


def binary_auc(scores, labels):
    """Mann-Whitney statistic with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = kernels.get("average_ranks")(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def macro_auc(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise ValueError("macro_auc: empty score matrix")
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ValueError(f"macro_auc: scores {scores.shape} and labels {labels.shape} must be equal M x C")
    per, skipped = {}, []
    for c in range(scores.shape[1]):
        pos = int(labels[:, c].sum())
        if pos == 0 or pos == labels.shape[0]:
            skipped.append(c)
            continue
        per[c] = binary_auc(scores[:, c], labels[:, c])
    if not per:
        raise ValueError("macro_auc: no class has both positives and negatives")
    return AUCResult(per, float(np.mean(list(per.values()))), skipped)


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


def extract_features(model, records, vocab, max_len, batch_size=128):
    """Frozen ECG features per record: pooled E, shared h_sh, specific h_sp."""
    pooled, shared, specific = [], [], []
    dtype = model.dtype
    with nx.no_grad():
        for i in range(0, len(records), batch_size):
            ecg = np.stack([r.ecg for r in records[i : i + batch_size]]).astype(dtype)
            e = model.ecg.pooled_representation(ecg)
            pooled.append(e.data)
            shared.append(model.heads.ecg_sh(e).data)
            specific.append(model.heads.ecg_sp(e).data)
    cat = lambda xs: np.concatenate(xs).astype(np.float64)  # noqa: E731
    return {"pooled": cat(pooled), "shared": cat(shared), "specific": cat(specific)}


def select_features(feats, kind="shared"):
    if kind == "shared":
        return feats["shared"]
    if kind == "pooled":
        return feats["pooled"]
    if kind == "concat":
        return np.concatenate([feats["shared"], feats["specific"]], axis=1)
    raise ValueError(f"feature kind must be one of {FEATURE_KINDS}, got {kind!r}")


# ---------------------------------------------------------------------------
# linear probe
# ---------------------------------------------------------------------------


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def stratified_split(labels, seed, fractions=(0.7, 0.1, 0.2)):
    labels = np.asarray(labels)
    rng = np.random.default_rng([seed, 11])
    parts = ([], [], [])
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_tr = int(round(fractions[0] * idx.size))
        n_va = int(round(fractions[1] * idx.size))
        parts[0].append(idx[:n_tr])
        parts[1].append(idx[n_tr : n_tr + n_va])
        parts[2].append(idx[n_tr + n_va :])
    return Split(*(np.sort(np.concatenate(p)) for p in parts))


def stratified_subsample(idx, labels, fraction, seed):
    """Per class, keep round(fraction * n) samples, at least one."""
    labels = np.asarray(labels)
    rng = np.random.default_rng([seed, 12])
    keep = []
    for c in np.unique(labels[idx]):
        members = idx[labels[idx] == c]
        k = max(1, int(round(fraction * members.size)))
        keep.append(rng.choice(members, size=k, replace=False))
    return np.sort(np.concatenate(keep))


@dataclass
class ProbeConfig:
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    weight_decay: float = 1e-5


def train_linear(x, y, n_classes, seed, cfg=ProbeConfig()):
    """One linear layer, per-class sigmoid + binary cross-entropy, AdamW."""
    rng = np.random.default_rng([seed, 13])
    w = nx.Tensor(rng.normal(0.0, 0.01, size=(x.shape[1], n_classes)), requires_grad=True)
    b = nx.Tensor(np.zeros(n_classes), requires_grad=True)
    opt = nx.OptimizerState.for_params([w, b], lr_max=cfg.lr, weight_decay=cfg.weight_decay)
    targets = one_hot(y, n_classes).astype(np.float64)
    signs = 2.0 * targets - 1.0
    for _ in range(cfg.epochs):
        order = rng.permutation(x.shape[0])
        for i in range(0, order.size, cfg.batch_size):
            sel = order[i : i + cfg.batch_size]
            logits = nx.matmul(nx.Tensor._wrap(x[sel]), w) + b
            # BCE(z, t) = -log sigmoid((2t - 1) z)
            loss = nx.mean(nx.log_sigmoid(logits * nx.Tensor._wrap(signs[sel]))) * (-1.0)
            gw, gb = nx.backward(loss, wrt=[w, b])
            nx.adamw_step([w, b], [gw, gb], opt, lr=cfg.lr)
    return w.data, b.data


def linear_probe(features, labels, fraction, seed, split_seed=0, n_classes=None, cfg=ProbeConfig()):
    """Fit on a stratified fraction of the train split; macro AUC on the fixed test split."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    split = stratified_split(labels, split_seed)
    tr = stratified_subsample(split.train, labels, fraction, seed)
    present = np.unique(labels[tr])
    missing = sorted(set(range(n_classes)) - set(present.tolist()))
    if missing:
        warnings.warn(f"linear_probe: classes {missing} have no training samples and are dropped", RuntimeWarning,
                      stacklevel=2)
    mu = features[tr].mean(axis=0)
    sd = features[tr].std(axis=0) + 1e-8
    z = (features - mu) / sd
    w, b = train_linear(z[tr], labels[tr], n_classes, seed, cfg)
    scores = z[split.test] @ w + b
    keep = [c for c in range(n_classes) if c not in missing]
    res = macro_auc(scores[:, keep], one_hot(labels[split.test], n_classes)[:, keep])
    return AUCResult({keep[c]: v for c, v in res.per_class.items()}, res.macro,
                     missing + [keep[c] for c in res.skipped])


# ---------------------------------------------------------------------------
# zero-shot
# ---------------------------------------------------------------------------


def prompt_embeddings(model, prompts, vocab, max_len):
    ids = np.stack([tokenize_text(p, vocab, max_len) for p in prompts])
    with nx.no_grad():
        h, _ = model.text_embeddings(ids)
        return nx.l2_normalize(h).data.astype(np.float64)


def zero_shot_scores(model, records, prompts, vocab, max_len, feats=None):
    """score[i, c] = <normalize(h_sh^ecg_i), normalize(h_sh^text(prompt_c))>."""
    if feats is None:
        feats = extract_features(model, records, vocab, max_len)
    shared = feats["shared"]
    he = shared / np.sqrt((shared**2).sum(axis=1, keepdims=True) + 1e-24)
    return he @ prompt_embeddings(model, prompts, vocab, max_len).T


def zero_shot(model, records, prompts, vocab, max_len, n_classes=None, feats=None):
    labels = np.array([r.label for r in records])
    n_classes = len(prompts) if n_classes is None else n_classes
    present = set(labels.tolist())
    if len(prompts) < n_classes or any(c >= len(prompts) for c in present):
        raise ValueError(f"zero_shot: {len(prompts)} prompts for classes {sorted(present)}")
    scores = zero_shot_scores(model, records, prompts, vocab, max_len, feats)
    return scores, macro_auc(scores, one_hot(labels, n_classes))


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------


def config_digest(config_json):
    return hashlib.sha1(config_json.encode()).hexdigest()


def eval_report(task, split_seed, result: AUCResult, class_names, digest, **extra):
    return {
        "task": task,
        "split_seed": split_seed,
        "per_class_auc": {class_names[c]: v for c, v in result.per_class.items()},
        "macro_auc": result.macro,
        "config_digest": digest,
        **extra,
    }


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def export_embeddings(records, feats, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r, sh, sp in zip(records, feats["shared"], feats["specific"]):
            fh.write(json.dumps({"id": r.id, "label": r.label, "h_sh": sh.tolist(), "h_sp": sp.tolist()}) + "\n")
