"""Small residual conv denoiser trained by denoising score matching."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import AdamState, Tensor, adam_step
from ..operators.base import OperatorModel
from .schedule import NoiseSchedule
from .score import ScoreModel


class DenoiserNet(OperatorModel):
    """Preconditioned denoiser D(z, tau) = c_skip z + c_out F(c_in z, c_noise).

    F is a stack of residual blocks of 'same'-padded 1-D convolutions; the
    noise level enters every block through fixed Fourier features of
    ``log(tau) / 4`` and a learned projection.
    """

    kind = "denoiser"

    def __init__(
        self,
        n_blocks: int = 6,
        channels: int = 32,
        kernel_size: int = 5,
        emb_dim: int = 16,
        sigma_data: float = 0.5,
        seed: int = 0,
    ):
        self.n_blocks = n_blocks
        self.channels = channels
        self.kernel_size = kernel_size
        self.emb_dim = emb_dim
        self.sigma_data = float(sigma_data)
        self.seed = seed
        self.freqs = np.random.default_rng(seed + 7919).standard_normal(emb_dim // 2)

    def config(self):
        return {
            "n_blocks": self.n_blocks,
            "channels": self.channels,
            "kernel_size": self.kernel_size,
            "emb_dim": self.emb_dim,
            "sigma_data": self.sigma_data,
            "seed": self.seed,
        }

    @classmethod
    def from_config(cls, cfg):
        return cls(**cfg)

    @property
    def param_groups(self):
        C, K, E = self.channels, self.kernel_size, self.emb_dim
        g = {"in_w": (C, 1, K), "in_b": (C,)}
        for i in range(self.n_blocks):
            g[f"b{i}_w1"] = (C, C, K)
            g[f"b{i}_b1"] = (C,)
            g[f"b{i}_ew"] = (E, C)
            g[f"b{i}_eb"] = (C,)
            g[f"b{i}_w2"] = (C, C, K)
            g[f"b{i}_b2"] = (C,)
        g["out_w"] = (1, C, K)
        g["out_b"] = (1,)
        return g

    def init_groups(self):
        rng = np.random.default_rng(self.seed)
        out = {}
        for name, shape in self.param_groups.items():
            if len(shape) == 1:
                out[name] = np.zeros(shape)
            elif name.endswith("_ew"):
                out[name] = rng.standard_normal(shape) / np.sqrt(shape[0])
            else:
                out[name] = rng.standard_normal(shape) / np.sqrt(shape[1] * shape[2])
        for i in range(self.n_blocks):
            out[f"b{i}_w2"] *= 0.1
        out["out_w"] *= 0.1
        return out

    def precond(self, tau: float):
        sd = self.sigma_data
        c_skip = sd * sd / (tau * tau + sd * sd)
        c_out = tau * sd / np.sqrt(tau * tau + sd * sd)
        c_in = 1.0 / np.sqrt(tau * tau + sd * sd)
        return c_skip, c_out, c_in

    def embedding(self, tau: float) -> np.ndarray:
        c_noise = np.log(tau) / 4.0
        ph = 2.0 * np.pi * self.freqs * c_noise
        return np.concatenate([np.cos(ph), np.sin(ph)])

    def denoise(self, z, tau: float, params) -> Tensor:
        z = ad.as_tensor(z)
        p = self.split(ad.as_tensor(params))
        lead, L = z.shape[:-1], z.shape[-1]
        c_skip, c_out, c_in = self.precond(tau)
        e = self.embedding(tau)
        h = ad.reshape(z * c_in, (-1, 1, L))
        h = ad.conv1d(h, p["in_w"], p["in_b"], padding="same")
        for i in range(self.n_blocks):
            u = ad.conv1d(ad.leaky_relu(h, 0.2), p[f"b{i}_w1"], p[f"b{i}_b1"], padding="same")
            cond = ad.matmul(e, p[f"b{i}_ew"]) + p[f"b{i}_eb"]
            u = u + ad.reshape(cond, (1, -1, 1))
            u = ad.conv1d(ad.leaky_relu(u, 0.2), p[f"b{i}_w2"], p[f"b{i}_b2"], padding="same")
            h = h + u
        f = ad.conv1d(ad.leaky_relu(h, 0.2), p["out_w"], p["out_b"], padding="same")
        return z * c_skip + ad.reshape(f, lead + (L,)) * c_out

    def forward(self, x, p):
        raise TypeError("use DenoiserNet.denoise(z, tau, params)")


class DenoiserScore(ScoreModel):
    """score(z, tau) = (D(z, tau) - z) / tau^2 for a trained denoiser."""

    def __init__(self, net: DenoiserNet, params: np.ndarray):
        self.net = net
        self.params = np.asarray(params, dtype=np.float64)

    def _score(self, z, tau):
        tau = max(tau, 1e-12)
        return (self.net.denoise(z, tau, self.params) - z) * (1.0 / (tau * tau))


@dataclass
class DsmConfig:
    iterations: int = 2000
    batch_size: int = 4
    lr: float = 1e-3
    seed: int = 0


@dataclass
class DsmState:
    params: np.ndarray
    adam: AdamState
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    losses: list = field(default_factory=list)


def dsm_loss(net: DenoiserNet, params: Tensor, x: np.ndarray, tau: np.ndarray, noise: np.ndarray):
    """Mean over the batch of lambda(tau) * ||D(x + n, tau) - x||^2 / L."""
    sd = net.sigma_data
    total = None
    for i in range(x.shape[0]):
        t = float(tau[i])
        d = net.denoise(x[i] + noise[i], t, params)
        r = d - x[i]
        w = (t * t + sd * sd) / (t * sd) ** 2
        term = ad.mean(r * r) * w
        total = term if total is None else total + term
    return total * (1.0 / x.shape[0])


def dsm_train(
    dataset: np.ndarray,
    net: DenoiserNet,
    schedule: NoiseSchedule,
    cfg: DsmConfig = DsmConfig(),
    state: DsmState | None = None,
    callback=None,
) -> tuple[DenoiserScore, DsmState]:
    """Fit ``net`` by denoising score matching on equal-length clean segments.

    Noise levels are drawn log-uniformly on [sigma_min, sigma_max]. Passing a
    previous ``state`` resumes from its step counter, parameters, optimiser
    and RNG. ``callback(step, loss)`` is called after every update.
    """
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("dataset must be a non-empty [n_segments, length] array")
    if state is None:
        rng = np.random.default_rng(cfg.seed)
        state = DsmState(net.init_params(), AdamState(lr=cfg.lr, beta1=0.9, beta2=0.99))
    else:
        rng = np.random.default_rng()
        rng.bit_generator.state = state.rng_state
    lo, hi = np.log(schedule.sigma_min), np.log(schedule.sigma_max)
    while state.step < cfg.iterations:
        idx = rng.integers(0, data.shape[0], size=cfg.batch_size)
        x = data[idx]
        tau = np.exp(rng.uniform(lo, hi, size=cfg.batch_size))
        noise = rng.standard_normal(x.shape) * tau[:, None]
        p = Tensor(state.params, requires_grad=True)
        loss = dsm_loss(net, p, x, tau, noise)
        (g,) = ad.grad(loss, [p])
        (new,), state.adam = adam_step([state.params], [g], state.adam)
        state.params = new
        state.step += 1
        state.losses.append(loss.item())
        if callback is not None:
            callback(state.step, loss.item())
    state.rng_state = rng.bit_generator.state
    return DenoiserScore(net, state.params), state
