"""Closed-form loss examples and independent scalar-loop oracles.

Each check returns ``(observed, expected)`` as floats or arrays; the table
pairs it with a tolerance.  ``run_oracles`` evaluates the whole table.
"""

from dataclasses import dataclass
import math
import warnings

import numpy as np

from ..align import AlignConfig, loss_full, loss_infonce, loss_siglip, similarity
from ..disentangle import DisentangledPair, HeadSet, ProjectionHead, loss_orth, project
from ..ecg_mae import loss_e_rec
from ..evaluate import binary_auc, macro_auc
from ..numerics import Tensor
from ..text_mae import reconstruction_nll

TRIVIAL_TOL = 1e-6
DERIVED_TOL = 1e-8


def _t(x):
    return Tensor(np.asarray(x, dtype=np.float64))


def _pair(sp, sh, modality="ecg"):
    return DisentangledPair(_t(sp), _t(sh), modality)


# ---------------------------------------------------------------------------
# scalar-loop reference implementations
# ---------------------------------------------------------------------------


def ref_e_rec(pred, target):
    b = len(pred)
    total = 0.0
    for j in range(b):
        s = 0.0
        for i in range(len(pred[j])):
            for p in range(len(pred[j][i])):
                s += (pred[j][i][p] - target[j][i][p]) ** 2
        total += s / len(pred[j])
    return total / b


def ref_t_rec(logits, targets):
    b = len(logits)
    total = 0.0
    for j in range(b):
        s = 0.0
        for m, row in enumerate(logits[j]):
            z = sum(math.exp(v) for v in row)
            s += -math.log(math.exp(row[targets[j][m]]) / z)
        total += s / len(logits[j])
    return total / b


def _cos(u, v):
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(a * a for a in v))
    if nu < 1e-8 or nv < 1e-8:
        return 0.0
    return sum(a * b for a, b in zip(u, v)) / (nu * nv)


def ref_orth(ecg_sp, ecg_sh, text_sp, text_sh):
    b = len(ecg_sp)
    return sum(_cos(text_sp[i], text_sh[i]) ** 2 + _cos(ecg_sp[i], ecg_sh[i]) ** 2 for i in range(b)) / b


def ref_siglip(he, ht):
    b = len(he)
    total = 0.0
    for i in range(b):
        for j in range(b):
            y = 1.0 if i == j else -1.0
            s = sum(a * c for a, c in zip(he[i], ht[j]))
            total += math.log(1.0 / (1.0 + math.exp(-y * s)))
    return -total / b


def ref_infonce_literal(s, tau):
    b = len(s)
    st = [[s[j][i] for j in range(b)] for i in range(b)]
    total = 0.0
    for m in (s, st):
        for i in range(b):
            den = sum(math.exp(m[i][k] / tau) for k in range(b) if k != i)
            for j in range(b):
                total += -math.log(math.exp(m[i][j] / tau) / den)
    return total / (2 * b)


def ref_infonce_standard(s, tau):
    b = len(s)
    st = [[s[j][i] for j in range(b)] for i in range(b)]
    total = 0.0
    for m in (s, st):
        for i in range(b):
            den = sum(math.exp(m[i][k] / tau) for k in range(b))
            total += -math.log(math.exp(m[i][i] / tau) / den)
    return total / (2 * b)


def ref_head(x, w1, b1, w2, b2):
    hidden = []
    for k in range(len(b1)):
        z = sum(x[i] * w1[i][k] for i in range(len(x))) + b1[k]
        hidden.append(z * 0.5 * (1.0 + math.erf(z / math.sqrt(2.0))))
    return [sum(hidden[k] * w2[k][o] for k in range(len(hidden))) + b2[o] for o in range(len(b2))]


def ref_pair_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    good = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return good / (len(pos) * len(neg))


# ---------------------------------------------------------------------------
# table
# ---------------------------------------------------------------------------


def _rng():
    return np.random.default_rng(20240)


def _e_rec_equal():
    x = _rng().normal(size=(2, 3, 4))
    return loss_e_rec(_t(x), x).item(), 0.0


def _e_rec_unit():
    return loss_e_rec(_t([[[1.0, 2.0]]]), np.array([[[1.0, 1.0]]])).item(), 1.0


def _e_rec_loop():
    rng = _rng()
    pred = [rng.normal(size=(2, 3)), rng.normal(size=(3, 3))]
    tgt = [rng.normal(size=(2, 3)), rng.normal(size=(3, 3))]
    pad_p = np.zeros((2, 3, 3))
    pad_t = np.zeros((2, 3, 3))
    valid = np.zeros((2, 3), dtype=bool)
    for j in range(2):
        pad_p[j, : len(pred[j])] = pred[j]
        pad_t[j, : len(tgt[j])] = tgt[j]
        valid[j, : len(pred[j])] = True
    got = loss_e_rec(_t(pad_p), pad_t, valid).item()
    return got, ref_e_rec([p.tolist() for p in pred], [t.tolist() for t in tgt])


def _t_rec_uniform():
    logits = _t(np.zeros((1, 3, 16)))
    return reconstruction_nll(logits, np.array([[1, 5, 9]]), np.ones((1, 3), bool)).item(), math.log(16)


def _t_rec_perfect():
    logits = np.full((1, 2, 5), -1e4)
    logits[0, 0, 2] = logits[0, 1, 4] = 0.0
    return reconstruction_nll(_t(logits), np.array([[2, 4]]), np.ones((1, 2), bool)).item(), 0.0


def _t_rec_loop():
    rng = _rng()
    logits = rng.normal(scale=0.5, size=(2, 2, 5))
    targets = np.array([[3, 0], [1, 4]])
    valid = np.array([[True, False], [True, True]])
    got = reconstruction_nll(_t(logits), targets, valid).item()
    ref = ref_t_rec([logits[0, :1].tolist(), logits[1].tolist()], [[3], [1, 4]])
    return got, ref


def _orth_perp():
    e = _pair([[1.0, 0.0]], [[0.0, 2.0]])
    t = _pair([[0.0, 0.0, 3.0]], [[1.0, 1.0, 0.0]], "text")
    return loss_orth(e, t).item(), 0.0


def _orth_same():
    u = [[0.6, 0.8]]
    return loss_orth(_pair(u, u), _pair(u, u, "text")).item(), 2.0


def _orth_loop():
    v = _rng().normal(size=(4, 2, 4))
    got = loss_orth(_pair(v[0], v[1]), _pair(v[2], v[3], "text")).item()
    return got, ref_orth(*(x.tolist() for x in v))


def _siglip_zero():
    z = _t(np.zeros((2, 3)))
    return loss_siglip(z, z).item(), 2.0 * math.log(2.0)


def _siglip_single():
    return loss_siglip(_t([[1.0, 0.0]]), _t([[0.0, 1.0]])).item(), math.log(2.0)


def _unit_rows(rng, b, d):
    x = rng.normal(size=(b, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _siglip_loop():
    rng = _rng()
    he, ht = _unit_rows(rng, 3, 4), _unit_rows(rng, 3, 4)
    return loss_siglip(_t(he), _t(ht)).item(), ref_siglip(he.tolist(), ht.tolist())


def _cons_equal():
    return loss_infonce(_t(np.full((2, 2), 0.3)), 0.07).item(), math.log(2.0)


def _cons_saturated():
    s = np.where(np.eye(2, dtype=bool), 1.0, -1.0)
    got = loss_infonce(_t(s), 0.07).item()
    return float(got < 1e-8), 1.0


def _cons_literal():
    s = [[0.9, 0.1], [0.2, 0.8]]
    return loss_infonce(_t(s), 0.07, mode="literal").item(), ref_infonce_literal(s, 0.07)


def _cons_standard_loop():
    rng = _rng()
    s = _unit_rows(rng, 4, 3) @ _unit_rows(rng, 4, 3).T
    return loss_infonce(_t(s), 0.1).item(), ref_infonce_standard(s.tolist(), 0.1)


def _cons_single():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return loss_infonce(_t([[0.4]]), 0.07).item(), 0.0


def _full_cons_only():
    cfg = AlignConfig(lambda0=0, lambda1=0, lambda2=0, lambda3=0)
    return float(loss_full(0.7, 0.5, 0.2, 0.3, 0.1, cfg)), 0.7


def _full_weighted():
    return float(loss_full(0.5, 0.2, 0.3, 0.1, 0.4, AlignConfig())), 1.5


def _full_loop():
    rng = _rng()
    comps = rng.uniform(0, 3, size=5)
    lam = rng.uniform(0, 2, size=4)
    cfg = AlignConfig(0.07, *lam)
    got = float(loss_full(*comps, cfg))
    ref = comps[0] + lam[0] * comps[1] + lam[1] * comps[2] + lam[2] * comps[3] + lam[3] * comps[4]
    return got, ref


def _head_zero():
    rng = _rng()
    heads = HeadSet(rng, 3, 2, dtype=np.float64)
    for head in (heads.ecg_sp, heads.ecg_sh):
        head.fc2.weight.data[:] = 0.0
        head.fc2.bias.data[:] = 0.0
    pair = project(_t(rng.normal(size=(2, 3))), heads, "ecg")
    return np.concatenate([pair.specific.data.ravel(), pair.shared.data.ravel()]), np.zeros(8)


def _head_loop():
    rng = _rng()
    head = ProjectionHead(rng, 3, 2, dtype=np.float64)
    for p in head.parameters():
        p.data = rng.normal(size=p.shape)
    x = rng.normal(size=3)
    got = head(_t(x[None])).data[0]
    w1, b1, w2, b2 = (p.data.tolist() for p in (head.fc1.weight, head.fc1.bias, head.fc2.weight, head.fc2.bias))
    return got, np.array(ref_head(x.tolist(), w1, b1, w2, b2))


def _auc_example():
    return binary_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]), 0.75


def _auc_perfect():
    return binary_auc([0.1, 0.2, 0.7, 0.9], [0, 0, 1, 1]), 1.0


def _auc_ties():
    labels = np.array([[1, 0], [0, 1], [1, 0]])
    return macro_auc(np.zeros((3, 2)), labels).macro, 0.5


def _similarity_transpose():
    rng = _rng()
    e, t = _t(rng.normal(size=(3, 2))), _t(rng.normal(size=(3, 2)))
    return similarity(e, t).data.T, similarity(t, e).data


@dataclass
class Oracle:
    name: str
    kind: str  # "trivial" or "derived"
    fn: object

    @property
    def tol(self):
        return TRIVIAL_TOL if self.kind == "trivial" else DERIVED_TOL


ORACLES = [
    Oracle("e_rec: prediction equals target -> 0", "trivial", _e_rec_equal),
    Oracle("e_rec: pred [1,2] vs target [1,1] -> 1", "trivial", _e_rec_unit),
    Oracle("e_rec: B=2, |M|=2,3 scalar loop", "derived", _e_rec_loop),
    Oracle("t_rec: uniform logits over V=16 -> ln 16", "trivial", _t_rec_uniform),
    Oracle("t_rec: probability one on truth -> 0", "trivial", _t_rec_perfect),
    Oracle("t_rec: B=2, |M|=1,2 scalar loop", "derived", _t_rec_loop),
    Oracle("orth: perpendicular pairs -> 0", "trivial", _orth_perp),
    Oracle("orth: identical unit pairs -> 2", "trivial", _orth_same),
    Oracle("orth: B=2 random 4-dim scalar loop", "derived", _orth_loop),
    Oracle("siglip: zero embeddings, B=2 -> 2 ln 2", "trivial", _siglip_zero),
    Oracle("siglip: B=1, inner product 0 -> ln 2", "trivial", _siglip_single),
    Oracle("siglip: B=3 scalar double loop", "derived", _siglip_loop),
    Oracle("cons: equal similarities, B=2 -> ln 2", "trivial", _cons_equal),
    Oracle("cons: saturated diagonal -> < 1e-8", "trivial", _cons_saturated),
    Oracle("cons: B=1 -> 0", "trivial", _cons_single),
    Oracle("cons: standard mode scalar loop", "derived", _cons_standard_loop),
    Oracle("cons: literal mode 2x2 scalar loop", "derived", _cons_literal),
    Oracle("full: all weights 0 -> L_Cons", "trivial", _full_cons_only),
    Oracle("full: unit weights (0.5,0.2,0.3,0.1,0.4) -> 1.5", "trivial", _full_weighted),
    Oracle("full: random weights scalar sum", "derived", _full_loop),
    Oracle("heads: zero final layer -> zero outputs", "trivial", _head_zero),
    Oracle("heads: 3-dim two-layer scalar forward", "derived", _head_loop),
    Oracle("similarity: t2e is the transpose of e2t", "trivial", _similarity_transpose),
    Oracle("auc: [0.1,0.4,0.35,0.8] vs [0,0,1,1] -> 0.75", "derived", _auc_example),
    Oracle("auc: perfect ranking -> 1", "trivial", _auc_perfect),
    Oracle("auc: all ties -> 0.5", "trivial", _auc_ties),
]


def run_oracles(oracles=ORACLES):
    """List of (oracle, passed, max abs error)."""
    out = []
    for o in oracles:
        got, want = o.fn()
        err = float(np.max(np.abs(np.asarray(got, dtype=np.float64) - np.asarray(want, dtype=np.float64))))
        out.append((o, err <= o.tol, err))
    return out


