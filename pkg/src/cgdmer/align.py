"""Cross-modal alignment losses and the combined objective."""

from dataclasses import asdict, dataclass
import warnings

import numpy as np

from . import numerics as nx
from .nn import NEG_INF

INFONCE_MODES = ("standard", "literal")


@dataclass
class AlignConfig:
    tau: float = 0.07
    lambda0: float = 1.0  # e_rec
    lambda1: float = 1.0  # t_rec
    lambda2: float = 1.0  # orth
    lambda3: float = 1.0  # siglip
    infonce_mode: str = "standard"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        for name in ("lambda0", "lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.infonce_mode not in INFONCE_MODES:
            raise ValueError(f"infonce_mode must be one of {INFONCE_MODES}, got {self.infonce_mode!r}")

    @property
    def lambdas(self):
        return (self.lambda0, self.lambda1, self.lambda2, self.lambda3)


@dataclass
class LossReport:
    e_rec: float
    t_rec: float
    orth: float
    siglip: float
    cons: float
    full: float

    def as_dict(self):
        return asdict(self)


def pair_labels(b):
    """y_ij = +1 on the diagonal, -1 elsewhere."""
    return 2.0 * np.eye(b) - 1.0


def similarity(h_ecg, h_text):
    """s^{e2t} = H_ecg H_text^T; the t2e matrix is its transpose."""
    if h_ecg.shape != h_text.shape:
        raise ValueError(f"embedding batches differ: {h_ecg.shape} vs {h_text.shape}")
    return nx.matmul(h_ecg, nx.transpose(h_text))


def loss_siglip(h_ecg, h_text):
    """-(1/B) sum_ij log sigmoid(y_ij <h_ecg_i, h_text_j>) on normalised inputs."""
    if h_ecg.shape[0] != h_text.shape[0]:
        raise ValueError(f"loss_siglip: batch sizes {h_ecg.shape[0]} and {h_text.shape[0]} differ")
    b = h_ecg.shape[0]
    s = similarity(h_ecg, h_text)
    y = nx.Tensor._wrap(pair_labels(b).astype(s.dtype))
    return nx.sum_(nx.log_sigmoid(s * y)) * (-1.0 / b)


def _check_finite(s):
    if not np.all(np.isfinite(s.data)):
        raise ValueError("loss_infonce: non-finite similarity")


def loss_infonce(s_e2t, tau=0.07, mode="standard", s_t2e=None):
    """L_Cons from the B x B e2t similarity matrix (t2e defaults to its transpose).

    ``standard``: cross-entropy of softmax(s_i./tau) against i in both
    directions, averaged over the 2B anchors.  ``literal``: denominators skip
    k = i and the numerator runs over every (i, j).  B = 1 returns 0.
    """
    if mode not in INFONCE_MODES:
        raise ValueError(f"infonce mode must be one of {INFONCE_MODES}, got {mode!r}")
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    _check_finite(s_e2t)
    if s_t2e is None:
        s_t2e = nx.transpose(s_e2t)
    else:
        _check_finite(s_t2e)
    b = s_e2t.shape[0]
    if s_e2t.shape != (b, b) or s_t2e.shape != (b, b):
        raise ValueError(f"loss_infonce: expected square similarity matrices, got {s_e2t.shape}")
    if b == 1:
        warnings.warn("contrastive loss with batch size 1 is defined as 0", RuntimeWarning, stacklevel=2)
        return nx.Tensor._wrap(np.zeros((), dtype=s_e2t.dtype)) + nx.sum_(s_e2t) * 0.0
    inv_tau = 1.0 / tau
    diag = np.arange(b)
    if mode == "standard":
        total = None
        for s in (s_e2t, s_t2e):
            term = nx.sum_(nx.softmax_cross_entropy(s * inv_tau, diag))
            total = term if total is None else total + term
        return total * (1.0 / (2 * b))
    off = nx.Tensor._wrap(np.where(np.eye(b, dtype=bool), NEG_INF, 0.0).astype(s_e2t.dtype))
    total = None
    for s in (s_e2t, s_t2e):
        z = s * inv_tau
        term = nx.sum_(nx.logsumexp(z + off, axis=1)) * float(b) - nx.sum_(z)
        total = term if total is None else total + term
    return total * (1.0 / (2 * b))


def loss_full(cons, e_rec, t_rec, orth, siglip, config: AlignConfig):
    """L_Cons + l0 L_e_rec + l1 L_t_rec + l2 L_orth + l3 L_SigLIP (tensors or floats)."""
    l0, l1, l2, l3 = config.lambdas
    if min(l0, l1, l2, l3) < 0:
        raise ValueError("loss weights must be nonnegative")
    total = cons
    for lam, term in ((l0, e_rec), (l1, t_rec), (l2, orth), (l3, siglip)):
        if lam != 0:
            total = total + term * lam
    return total
