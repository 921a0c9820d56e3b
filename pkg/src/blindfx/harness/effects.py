"""Closed-form reference effects used as synthetic ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

KINDS = ("identity", "gain", "tanh_drive", "hard_clip", "wh_reference")


@dataclass(frozen=True)
class GroundTruthEffect:
    """A deterministic, time-invariant effect.

    identity: y = x. gain: y = param * x. tanh_drive: tanh(g x) / tanh(g).
    hard_clip: clip(x, -t, t) / t. wh_reference: a Wiener-Hammerstein
    operator with fixed flat parameters ``wh_params`` and ``wh_config``.
    ``pre_emphasis`` applies the first-order FIR 1 - c z^-1 before the
    nonlinearity when non-zero.
    """

    kind: str
    param: float = 1.0
    severity: str = ""
    pre_emphasis: float = 0.0
    wh_params: tuple = field(default=(), compare=False)
    wh_config: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown effect kind {self.kind!r}")
        if self.kind == "tanh_drive" and self.param <= 0:
            raise ValueError("tanh drive must be positive")
        if self.kind == "hard_clip" and self.param <= 0:
            raise ValueError("clip threshold must be positive")

    def __call__(self, x):
        return apply_ground_truth(self, x)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "param": self.param, "severity": self.severity, "pre_emphasis": self.pre_emphasis}
        if self.kind == "wh_reference":
            d["wh_params"] = list(self.wh_params)
            d["wh_config"] = dict(self.wh_config)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthEffect":
        d = dict(d)
        d["wh_params"] = tuple(d.get("wh_params", ()))
        return cls(**d)


def apply_ground_truth(effect: GroundTruthEffect, x) -> np.ndarray:
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    if effect.kind == "identity":
        return x.copy()
    if effect.pre_emphasis:
        x = lfilter([1.0, -effect.pre_emphasis], [1.0], x, axis=-1)
    if effect.kind == "gain":
        return effect.param * x
    if effect.kind == "tanh_drive":
        g = effect.param
        return np.tanh(g * x) / np.tanh(g)
    if effect.kind == "hard_clip":
        t = effect.param
        return np.clip(x, -t, t) / t
    from ..autodiff import no_grad
    from ..operators import WienerHammerstein

    op = WienerHammerstein.from_config(effect.wh_config) if effect.wh_config else WienerHammerstein()
    with no_grad():
        return op(x, np.asarray(effect.wh_params, dtype=np.float64)).data


PRESETS = {
    "identity": GroundTruthEffect("identity", severity="identity"),
    "clean": GroundTruthEffect("tanh_drive", 1.5, "clean"),
    "light": GroundTruthEffect("tanh_drive", 4.0, "light"),
    "heavy": GroundTruthEffect("hard_clip", 0.3, "heavy", pre_emphasis=0.3),
}


def preset(name: str) -> GroundTruthEffect:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown severity preset {name!r}; choose from {sorted(PRESETS)}") from None
