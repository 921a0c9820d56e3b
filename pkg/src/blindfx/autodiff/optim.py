"""Adam / AdamW on lists of float64 arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, ShapeError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "t": self.t,
            "m": [a.tolist() for a in self.m],
            "v": [a.tolist() for a in self.v],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        d = dict(d)
        d["m"] = [np.asarray(a, dtype=np.float64) for a in d.get("m", [])]
        d["v"] = [np.asarray(a, dtype=np.float64) for a in d.get("v", [])]
        return cls(**d)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update.

    Weight decay is decoupled (AdamW): ``p <- p * (1 - lr * wd)`` before the
    moment update is applied. Returns new parameter arrays and the advanced
    state; inputs are not modified.
    """
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} params but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"adam_step: shape mismatch {p.shape}, {g.shape}, {m.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("adam_step: non-finite gradient")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        if state.weight_decay > 0:
            p = p * (1.0 - state.lr * state.weight_decay)
        p = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_params.append(p)
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(
        state.lr, b1, b2, state.eps, state.weight_decay, t, new_m, new_v
    )
    return new_params, new_state
