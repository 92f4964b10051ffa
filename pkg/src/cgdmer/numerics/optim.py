"""AdamW with decoupled weight decay and a cosine-annealed learning rate."""

from dataclasses import dataclass, field
import math

import numpy as np


@dataclass
class OptimizerState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    lr_max: float = 2e-4
    lr_min: float = 0.0
    weight_decay: float = 1e-5
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    total_steps: int = 1

    @classmethod
    def for_params(cls, params, **hyper):
        arrays = [p.data if hasattr(p, "data") else np.asarray(p) for p in params]
        st = cls(m=[np.zeros_like(a) for a in arrays], v=[np.zeros_like(a) for a in arrays], **hyper)
        st.validate()
        return st

    def validate(self):
        if not (self.lr_max > 0 and 0 <= self.lr_min <= self.lr_max):
            raise ValueError(f"need 0 <= lr_min <= lr_max and lr_max > 0, got {self.lr_min}, {self.lr_max}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        b1, b2 = self.betas
        if not (0 < b1 < 1 and 0 < b2 < 1):
            raise ValueError(f"betas must lie in (0, 1), got {self.betas}")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.total_steps < 1:
            raise ValueError("total_steps must be a positive integer")


def cosine_lr(t, state):
    """lr_min + (lr_max - lr_min) * (1 + cos(pi t / total)) / 2, clamped to lr_min past the end."""
    if t < 0:
        raise ValueError(f"step must be nonnegative, got {t}")
    if t >= state.total_steps:
        return float(state.lr_min)
    return state.lr_min + 0.5 * (state.lr_max - state.lr_min) * (1.0 + math.cos(math.pi * t / state.total_steps))


def adamw_step(params, grads, state, lr=None):
    """One AdamW update, in place on the parameter arrays.

    ``params`` are arrays (or tensors, whose ``.data`` is updated).  When
    ``lr`` is None the cosine schedule at the current step count is used.
    Returns (params, state).
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError(
            f"adamw_step: {len(params)} params, {len(grads)} grads, {len(state.m)}/{len(state.v)} moment slots"
        )
    if lr is None:
        lr = cosine_lr(state.t, state)
    b1, b2 = state.betas
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    decay = 1.0 - lr * state.weight_decay
    for i, (p, g) in enumerate(zip(params, grads)):
        arr = p.data if hasattr(p, "data") and not isinstance(p, np.ndarray) else p
        g = np.asarray(g)
        m, v = state.m[i], state.v[i]
        if not (arr.shape == g.shape == m.shape == v.shape):
            raise ValueError(f"adamw_step: shape mismatch for parameter {i}: {arr.shape}, {g.shape}, {m.shape}")
        if not np.isfinite(g).all():
            raise ValueError(f"adamw_step: non-finite gradient for parameter {i}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        arr *= decay
        arr -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
