"""Gated convolutional network black box."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .base import OperatorModel


class GatedConvNet(OperatorModel):
    """Causal dilated convolutions with tanh * sigmoid gates.

    Layer ``l`` uses dilation ``2**l``. Each layer's gated output feeds a 1x1
    residual mix into the next layer and a shared 1x1 output projection over
    all layers. Parameter count::

        conv:  2C * C_in * K + 2C        (C_in = 1 for the first layer)
        mix:   C * C + C                 (every layer but the last)
        out:   n_layers * C + 1
    """

    kind = "gcn"

    def __init__(self, n_layers: int = 8, channels: int = 12, kernel_size: int = 3, seed: int = 0):
        if n_layers < 1 or channels < 1 or kernel_size < 1:
            raise ValueError("GCN sizes must be positive")
        self.n_layers = n_layers
        self.channels = channels
        self.kernel_size = kernel_size
        self.seed = seed

    @classmethod
    def paper_scale(cls, seed: int = 0) -> "GatedConvNet":
        """About 31k parameters (10 layers, 22 channels)."""
        return cls(n_layers=10, channels=22, kernel_size=3, seed=seed)

    def config(self):
        return {
            "n_layers": self.n_layers,
            "channels": self.channels,
            "kernel_size": self.kernel_size,
            "seed": self.seed,
        }

    @classmethod
    def from_config(cls, cfg):
        return cls(**cfg)

    @property
    def dilations(self):
        return [2**i for i in range(self.n_layers)]

    @property
    def param_groups(self):
        C, K = self.channels, self.kernel_size
        groups = {}
        for i in range(self.n_layers):
            cin = 1 if i == 0 else C
            groups[f"conv{i}_w"] = (2 * C, cin, K)
            groups[f"conv{i}_b"] = (2 * C,)
            if i < self.n_layers - 1:
                groups[f"mix{i}_w"] = (C, C, 1)
                groups[f"mix{i}_b"] = (C,)
        groups["out_w"] = (1, self.n_layers * C, 1)
        groups["out_b"] = (1,)
        return groups

    def init_groups(self):
        rng = np.random.default_rng(self.seed)
        out = {}
        for name, shape in self.param_groups.items():
            if name.endswith("_b"):
                out[name] = np.zeros(shape)
            else:
                fan_in = shape[1] * shape[2]
                out[name] = rng.standard_normal(shape) / np.sqrt(fan_in)
        out["out_w"] *= 0.1
        return out

    def forward(self, x, p):
        lead = x.shape[:-1]
        L = x.shape[-1]
        h = ad.reshape(x, (-1, 1, L))
        C = self.channels
        skips = []
        for i, d in enumerate(self.dilations):
            a = ad.conv1d(h, p[f"conv{i}_w"], p[f"conv{i}_b"], dilation=d, padding="causal")
            z = ad.tanh(a[:, :C]) * ad.sigmoid(a[:, C:])
            skips.append(z)
            if i < self.n_layers - 1:
                h = ad.conv1d(z, p[f"mix{i}_w"], p[f"mix{i}_b"], padding="causal") + h
        y = ad.conv1d(ad.concat(skips, axis=1), p["out_w"], p["out_b"], padding="causal")
        return ad.reshape(y, lead + (L,))
