"""Shared interface for parametric effect models f(x; psi)."""

from __future__ import annotations

from math import prod

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor


class OperatorModel:
    """A deterministic, time-invariant map from a signal to a same-length signal.

    Subclasses declare ``param_groups`` (ordered name -> shape) and implement
    :meth:`init_groups` and :meth:`forward`. Parameters travel as one flat
    float64 vector; the group order fixes the flattening.
    """

    kind = "base"

    def config(self) -> dict:
        raise NotImplementedError

    @property
    def param_groups(self) -> dict[str, tuple[int, ...]]:
        raise NotImplementedError

    @property
    def param_count(self) -> int:
        return sum(prod(s) for s in self.param_groups.values())

    def init_groups(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def init_params(self) -> np.ndarray:
        return self.flatten(self.init_groups())

    def flatten(self, groups: dict[str, np.ndarray]) -> np.ndarray:
        parts = []
        for name, shape in self.param_groups.items():
            a = np.asarray(groups[name], dtype=np.float64)
            if a.shape != shape:
                raise ValueError(f"{self.kind}: group {name} has shape {a.shape}, expected {shape}")
            parts.append(a.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def unflatten(self, flat) -> dict[str, np.ndarray]:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.param_count,):
            raise ValueError(
                f"{self.kind}: expected {self.param_count} parameters, got {flat.shape}"
            )
        out, i = {}, 0
        for name, shape in self.param_groups.items():
            n = prod(shape)
            out[name] = flat[i : i + n].reshape(shape).copy()
            i += n
        return out

    def split(self, params: Tensor) -> dict[str, Tensor]:
        """Differentiable view of a flat parameter tensor as named groups."""
        if params.shape != (self.param_count,):
            raise ValueError(
                f"{self.kind}: expected {self.param_count} parameters, got {params.shape}"
            )
        out, i = {}, 0
        for name, shape in self.param_groups.items():
            n = prod(shape)
            out[name] = ad.reshape(params[i : i + n], shape)
            i += n
        return out

    def forward(self, x: Tensor, p: dict[str, Tensor]) -> Tensor:
        raise NotImplementedError

    def apply(self, x, params) -> Tensor:
        """Run the model on ``x [..., L]``; differentiable in both arguments."""
        x = ad.as_tensor(x)
        y = self.forward(x, self.split(ad.as_tensor(params)))
        if y.shape != x.shape:
            raise ad.ShapeError(f"{self.kind}: output shape {y.shape} != input {x.shape}")
        return y

    def __call__(self, x, params) -> Tensor:
        return self.apply(x, params)


class GainOperator(OperatorModel):
    """y = g * x with a single scalar gain."""

    kind = "gain"

    def __init__(self, init_gain: float = 1.0):
        self.init_gain = float(init_gain)

    def config(self):
        return {"init_gain": self.init_gain}

    @property
    def param_groups(self):
        return {"gain": (1,)}

    def init_groups(self):
        return {"gain": np.array([self.init_gain])}

    def forward(self, x, p):
        return x * p["gain"]
