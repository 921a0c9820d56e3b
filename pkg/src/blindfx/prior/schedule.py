from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-exploding schedule (sigma(tau) = tau) with rho-warped steps.

    ``taus[0] == sigma_max`` and ``taus[-1] == sigma_min``; strictly decreasing.
    """

    sigma_max: float = 10.0
    sigma_min: float = 1e-4
    steps: int = 101
    rho: float = 7.0

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.steps < 2:
            raise ValueError("need at least 2 steps")

    @property
    def taus(self) -> np.ndarray:
        k = np.arange(self.steps) / (self.steps - 1)
        a = self.sigma_max ** (1.0 / self.rho)
        b = self.sigma_min ** (1.0 / self.rho)
        t = (a + k * (b - a)) ** self.rho
        t[0], t[-1] = self.sigma_max, self.sigma_min
        return t
