from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import AdamState, Tensor, adam_step
from ..dsp import SpectralCostConfig, StftConfig, compressed_stft_cost
from ..operators.base import OperatorModel


@dataclass
class SupervisedConfig:
    """Paired-data fit. Desk defaults; ``paper()`` gives 5k steps at lr 1e-4."""

    iterations: int = 1000
    lr: float = 1e-3
    batch_size: int = 4
    seed: int = 0
    compression: float = 0.5
    cost_window: int = 1024
    cost_hop: int = 256

    @classmethod
    def paper(cls, seed: int = 0) -> "SupervisedConfig":
        return cls(iterations=5000, lr=1e-4, seed=seed)

    @property
    def cost(self) -> SpectralCostConfig:
        return SpectralCostConfig(self.compression, StftConfig(self.cost_window, self.cost_hop, self.cost_window))


def supervised_train(
    pairs,
    operator: OperatorModel,
    cfg: SupervisedConfig = SupervisedConfig(),
    init_params: np.ndarray | None = None,
) -> tuple[np.ndarray, list[float]]:
    """Fit ``operator`` to aligned (x, y) segments by Adam on the compressed STFT cost.

    Returns the parameters and the per-step training loss.
    """
    X, Y = (np.asarray(a, dtype=np.float64) for a in pairs)
    if X.shape != Y.shape or X.ndim != 2:
        raise ValueError(f"pairs must be aligned [N, L] arrays, got {X.shape} and {Y.shape}")
    rng = np.random.default_rng(cfg.seed)
    params = operator.init_params() if init_params is None else np.array(init_params, dtype=np.float64)
    opt = AdamState(lr=cfg.lr)
    cost = cfg.cost
    losses = []
    for _ in range(cfg.iterations):
        idx = np.sort(rng.choice(len(X), size=min(cfg.batch_size, len(X)), replace=False))
        p = Tensor(params, requires_grad=True)
        loss = compressed_stft_cost(Y[idx], operator(X[idx], p), cost)
        (g,) = ad.grad(loss, [p])
        (params,), opt = adam_step([params], [g], opt)
        losses.append(loss.item())
    return params, losses
