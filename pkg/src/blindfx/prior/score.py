"""Score-model interface, the closed-form Gaussian prior, Tweedie and the ODE sampler."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from .schedule import NoiseSchedule


class ScoreModel:
    """Approximates grad_z log p(z_tau) for variance-exploding noise level tau.

    ``evaluations`` counts scored examples, which lets callers check that a
    cached score is reused instead of recomputed.
    """

    evaluations = 0

    def _score(self, z: Tensor, tau: float) -> Tensor:
        raise NotImplementedError

    def score(self, z, tau: float) -> Tensor:
        if tau < 0:
            raise ValueError("tau must be >= 0")
        z = ad.as_tensor(z)
        self.evaluations += int(np.prod(z.shape[:-1], dtype=int))
        s = self._score(z, float(tau))
        if s.shape != z.shape:
            raise ad.ShapeError(f"score shape {s.shape} != input shape {z.shape}")
        return s


class GaussianAnalyticPrior(ScoreModel):
    """Stationary AR(1) Gaussian realised as a circulant covariance.

    The covariance of a length-L signal is diagonal in the DFT basis with
    eigenvalues ``v (1 - a^2) / (1 - 2 a cos w + a^2)``, the AR(1) spectrum
    sampled at the DFT frequencies. ``ar_coef=0`` gives white noise of
    variance ``variance``.
    """

    def __init__(self, ar_coef: float = 0.0, variance: float = 1.0):
        if not -1.0 < ar_coef < 1.0:
            raise ValueError(f"AR coefficient {ar_coef} gives a non-positive-definite covariance")
        if not variance > 0:
            raise ValueError("variance must be positive")
        self.ar_coef = float(ar_coef)
        self.variance = float(variance)
        self._cache: dict[int, np.ndarray] = {}

    def config(self):
        return {"ar_coef": self.ar_coef, "variance": self.variance}

    @classmethod
    def fit(cls, signals: np.ndarray) -> "GaussianAnalyticPrior":
        """Moment fit of coefficient and marginal variance to clean examples."""
        x = np.atleast_2d(np.asarray(signals, dtype=np.float64))
        v = float(np.mean(x * x))
        a = float(np.mean(x[:, 1:] * x[:, :-1]) / v)
        return cls(float(np.clip(a, -0.999, 0.999)), v)

    def spectrum(self, length: int) -> np.ndarray:
        lam = self._cache.get(length)
        if lam is None:
            a, v = self.ar_coef, self.variance
            w = 2.0 * np.pi * np.arange(length // 2 + 1) / length
            lam = v * (1.0 - a * a) / (1.0 - 2.0 * a * np.cos(w) + a * a)
            self._cache[length] = lam
        return lam

    def apply_spectral(self, z, gains: np.ndarray) -> Tensor:
        """Multiply ``z`` by the circulant matrix with eigenvalues ``gains``."""
        z = ad.as_tensor(z)
        L = z.shape[-1]
        re, im = ad.rfft(z, L)
        return ad.irfft(re * gains, im * gains, L)

    def _score(self, z, tau):
        return -self.apply_spectral(z, 1.0 / (self.spectrum(z.shape[-1]) + tau * tau))

    def sample(self, shape, rng: np.random.Generator) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape))
        w = rng.standard_normal(shape)
        with ad.no_grad():
            return self.apply_spectral(w, np.sqrt(self.spectrum(shape[-1]))).data


def tweedie_denoise(z_tau, tau: float, model: ScoreModel, score: Tensor | None = None) -> Tensor:
    """One-step posterior-mean estimate ``z + tau^2 * score(z, tau)``."""
    z_tau = ad.as_tensor(z_tau)
    if score is None:
        score = model.score(z_tau, tau)
    return z_tau + score * (tau * tau)


def euler_step(z: np.ndarray, tau: float, drift: np.ndarray, dtau: float) -> np.ndarray:
    """One Euler step of dz = -tau * drift dtau."""
    return z - tau * drift * dtau


def ode_sample(
    model: ScoreModel,
    schedule: NoiseSchedule,
    seed: int,
    shape=(1024,),
) -> np.ndarray:
    """Integrate the probability-flow ODE from N(0, tau_1^2 I) down to tau_K."""
    rng = np.random.default_rng(seed)
    taus = schedule.taus
    z = taus[0] * rng.standard_normal(tuple(np.atleast_1d(shape)))
    with ad.no_grad():
        for k in range(len(taus) - 1):
            s = model.score(z, taus[k]).data
            z = euler_step(z, taus[k], s, taus[k + 1] - taus[k])
    return z
