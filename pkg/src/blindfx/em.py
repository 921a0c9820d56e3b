"""Blind operator estimation by diffusion posterior sampling inside an EM loop.

Each iteration denoises the current latents with Tweedie's formula (E-step),
fits the operator to the observations on those estimates (M-step), and then
moves the latents one Euler step along the likelihood-guided probability-flow
ODE. Only the observations ``Y`` enter; clean audio reaches the engine solely
through the score model.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step
from .dsp import SpectralCostConfig, StftConfig, compressed_stft_cost
from .operators.base import OperatorModel
from .prior import NoiseSchedule, ScoreModel, euler_step


class EMDivergenceError(FloatingPointError):
    """Raised when the M-step objective turns non-finite; carries a snapshot."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


def cost_normalized_zeta(tau: float, raw_cost: float, zeta_prime: float) -> float:
    """zeta' / sqrt(cost): guidance whose step size does not depend on cost scale."""
    if raw_cost < 0:
        raise ValueError("raw_cost must be >= 0")
    return zeta_prime / np.sqrt(max(raw_cost, 1e-12))


zeta_schedule = cost_normalized_zeta


def gradient_normalized_zeta(tau: float, grad_norm: float, length: int, zeta_prime: float) -> float:
    """zeta' sqrt(L) / (tau |grad C|): the guided Euler displacement has norm
    zeta' sqrt(L) |dtau|, a fixed fraction of the unguided one."""
    return zeta_prime * np.sqrt(length) / (max(tau, 1e-12) * max(grad_norm, 1e-12))


def log_tau_zeta(tau: float, grad_norm: float, length: int, zeta_prime: float) -> float:
    """zeta' sqrt(L) / (tau^2 |grad C|): guidance displacement per unit of log tau is fixed."""
    tau = max(tau, 1e-12)
    return zeta_prime * np.sqrt(length) / (tau * tau * max(grad_norm, 1e-12))


def per_step_zeta(tau: float, raw_cost: float, dtau: float, zeta_prime: float) -> float:
    """zeta' / (sqrt(cost) tau |dtau|): the guidance displacement is zeta' grad C / sqrt(C)
    whatever the step size, as in plain posterior-sampling guidance."""
    return cost_normalized_zeta(tau, raw_cost, zeta_prime) / (max(tau, 1e-12) * max(abs(dtau), 1e-12))


ZETA_POLICIES = {
    "log_tau": lambda tau, cost, gnorm, n, zp, dtau: log_tau_zeta(tau, gnorm, n, zp),
    "normalized": lambda tau, cost, gnorm, n, zp, dtau: cost_normalized_zeta(tau, cost, zp),
    "gradient": lambda tau, cost, gnorm, n, zp, dtau: gradient_normalized_zeta(tau, gnorm, n, zp),
    "per_step": lambda tau, cost, gnorm, n, zp, dtau: per_step_zeta(tau, cost, dtau, zp),
    "constant": lambda tau, cost, gnorm, n, zp, dtau: zp,
}


@dataclass
class EMConfig:
    steps: int = 101
    m_its: int = 20
    zeta_prime: float = 0.2
    zeta_policy: str = "normalized"
    batch_size: int = 4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 1e-2
    compression: float = 0.5
    cost_window: int = 1024
    cost_hop: int = 256
    cost_fft: int = 1024
    frozen_denoiser: bool = False
    score_batch: int = 4
    track_objective: bool = False

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError("steps must be >= 2")
        if self.m_its < 0:
            raise ValueError("m_its must be >= 0")
        if self.zeta_policy not in ZETA_POLICIES:
            raise ValueError(f"unknown zeta policy {self.zeta_policy!r}")

    @property
    def cost(self) -> SpectralCostConfig:
        return SpectralCostConfig(self.compression, StftConfig(self.cost_window, self.cost_hop, self.cost_fft))

    def zeta(self, tau: float, raw_cost: float, grad_norm: float = 1.0, length: int = 1, dtau: float = 1.0) -> float:
        return ZETA_POLICIES[self.zeta_policy](tau, raw_cost, grad_norm, length, self.zeta_prime, dtau)

    def adam(self) -> AdamState:
        return AdamState(lr=self.lr, beta1=self.beta1, beta2=self.beta2, weight_decay=self.weight_decay)


@dataclass
class EMState:
    k: int
    latents: np.ndarray
    params: np.ndarray
    adam: AdamState
    rng_state: dict

    def __post_init__(self):
        if self.latents.ndim != 2:
            raise ValueError("latents must be [N, L]")

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "latents": self.latents.tolist(),
            "params": self.params.tolist(),
            "adam": self.adam.to_dict(),
            "rng_state": self.rng_state,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EMState":
        return cls(
            int(d["k"]),
            np.asarray(d["latents"], dtype=np.float64),
            np.asarray(d["params"], dtype=np.float64),
            AdamState.from_dict(d["adam"]),
            d["rng_state"],
        )

    def save(self, path) -> Path:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps({"format": "blindfx-emstate", "version": 1, "state": self.to_dict()}))
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "EMState":
        d = json.loads(Path(path).read_text())
        if d.get("format") != "blindfx-emstate":
            raise ValueError(f"{path} is not an EM state checkpoint")
        return cls.from_dict(d["state"])


@dataclass
class EStepCache:
    """Graph of one E-step, reused by the latent update."""

    tau: float
    z: list[Tensor]
    score: list[Tensor]
    denoised: list[Tensor]

    def estimates(self) -> np.ndarray:
        return np.concatenate([d.data for d in self.denoised], axis=0)


@dataclass
class EMResult:
    params: np.ndarray
    denoised: np.ndarray
    state: EMState
    history: list = field(default_factory=list)


def _as_batch(Y) -> np.ndarray:
    if isinstance(Y, np.ndarray):
        Y = Y.astype(np.float64, copy=False)
        if Y.ndim == 1:
            Y = Y[None, :]
    else:
        Y = [np.asarray(getattr(y, "samples", y), dtype=np.float64) for y in Y]
        if not Y:
            raise ValueError("Y is empty")
        if len({len(y) for y in Y}) != 1:
            raise ValueError("observations must share one length")
        Y = np.stack(Y)
    if Y.ndim != 2 or Y.shape[0] == 0:
        raise ValueError("Y must be a non-empty [N, L] batch")
    return Y


def em_init(Y, schedule: NoiseSchedule, operator: OperatorModel, cfg: EMConfig, seed: int) -> EMState:
    """Latents drawn from N(0, tau_1^2 I); operator at its identity initialization."""
    Y = _as_batch(Y)
    rng = np.random.default_rng(seed)
    z = schedule.taus[0] * rng.standard_normal(Y.shape)
    return EMState(0, z, operator.init_params(), cfg.adam(), rng.bit_generator.state)


def e_step(state: EMState, model: ScoreModel, schedule: NoiseSchedule, cfg: EMConfig) -> EStepCache:
    tau = float(schedule.taus[state.k])
    cache = EStepCache(tau, [], [], [])
    for lo in range(0, state.latents.shape[0], cfg.score_batch):
        z = Tensor(state.latents[lo : lo + cfg.score_batch], requires_grad=not cfg.frozen_denoiser)
        s = model.score(z, tau)
        cache.z.append(z)
        cache.score.append(s)
        cache.denoised.append(z + s * (tau * tau))
    return cache


def _objective(operator, params, Z0, Y, cost_cfg) -> float:
    with ad.no_grad():
        return float(compressed_stft_cost(Y, operator(Z0, params), cost_cfg).item())


def m_step(
    state: EMState,
    Z0: np.ndarray,
    Y,
    operator: OperatorModel,
    cfg: EMConfig,
) -> list[float]:
    """``cfg.m_its`` Adam steps on random batches; updates ``state`` in place.

    Returns the mini-batch objective before each step.
    """
    Y = _as_batch(Y)
    if Z0.shape != Y.shape:
        raise ValueError("estimates and observations differ in shape")
    rng = np.random.default_rng()
    rng.bit_generator.state = state.rng_state
    cost_cfg = cfg.cost
    n = Y.shape[0]
    losses = []
    for _ in range(cfg.m_its):
        idx = np.sort(rng.choice(n, size=min(cfg.batch_size, n), replace=False))
        p = Tensor(state.params, requires_grad=True)
        try:
            loss = compressed_stft_cost(Y[idx], operator(Z0[idx], p), cost_cfg)
        except ad.NonFiniteError:
            loss = Tensor(np.nan)
        if not np.isfinite(loss.item()):
            raise EMDivergenceError(
                f"non-finite M-step objective at iteration {state.k}",
                {"k": state.k, "params": state.params.tolist(), "batch": idx.tolist()},
            )
        (g,) = ad.grad(loss, [p])
        (state.params,), state.adam = adam_step([state.params], [g], state.adam)
        losses.append(loss.item())
    state.rng_state = rng.bit_generator.state
    return losses


def latent_update(
    state: EMState,
    Y,
    cache: EStepCache,
    operator: OperatorModel,
    schedule: NoiseSchedule,
    cfg: EMConfig,
) -> dict:
    """Guided Euler step from tau_k to tau_{k+1} using the cached E-step graph.

    The likelihood gradient is taken through Tweedie's formula into the
    score model unless ``cfg.frozen_denoiser`` stops it at the estimate.
    Returns per-observation costs and guidance weights.
    """
    if state.k >= schedule.steps - 1:
        raise ValueError("latents are already at the final noise level")
    Y = _as_batch(Y)
    taus = schedule.taus
    tau, dtau = taus[state.k], taus[state.k + 1] - taus[state.k]
    cost_cfg = cfg.cost
    costs, zetas, out = [], [], []
    lo = 0
    for z, s, d in zip(cache.z, cache.score, cache.denoised):
        hi = lo + z.shape[0]
        x0 = d if not cfg.frozen_denoiser else Tensor(d.data, requires_grad=True)
        wrt = x0 if cfg.frozen_denoiser else z
        try:
            c = compressed_stft_cost(Y[lo:hi], operator(x0, state.params), cost_cfg, per_example=True)
            (g,) = ad.grad(ad.tsum(c), [wrt])
        except ad.NonFiniteError as e:
            raise EMDivergenceError(f"non-finite guidance at iteration {state.k}: {e}", {"k": state.k}) from e
        gn = np.sqrt(np.sum(g * g, axis=-1))
        zeta = np.array([cfg.zeta(tau, float(ci), float(ni), g.shape[-1], dtau) for ci, ni in zip(c.data, gn)])
        drift = s.data - zeta[:, None] * g
        out.append(euler_step(z.data, tau, drift, dtau))
        costs.extend(c.data.tolist())
        zetas.extend(zeta.tolist())
        lo = hi
    z_new = np.concatenate(out, axis=0)
    if not np.all(np.isfinite(z_new)):
        raise EMDivergenceError(f"non-finite latents at iteration {state.k}", {"k": state.k})
    state.latents = z_new
    state.k += 1
    return {"cost": costs, "zeta": zetas}


class _Telemetry:
    def __init__(self, sink):
        self._own = False
        if sink is None or hasattr(sink, "write"):
            self.f = sink
        else:
            self.f = open(sink, "a")
            self._own = True

    def write(self, rec: dict):
        if self.f is not None:
            self.f.write(json.dumps(rec) + "\n")
            self.f.flush()

    def close(self):
        if self._own:
            self.f.close()


def run_em(
    Y,
    model: ScoreModel,
    operator: OperatorModel,
    cfg: EMConfig = EMConfig(),
    seed: int = 0,
    schedule: NoiseSchedule | None = None,
    telemetry=None,
    state: EMState | None = None,
    checkpoint=None,
    checkpoint_every: int = 10,
    callback=None,
) -> EMResult:
    """Run the full loop and return the estimated parameters and clean estimates.

    ``telemetry`` is a path or writable stream receiving one JSON record per
    iteration. Passing ``state`` resumes a saved run; ``checkpoint`` is a path
    rewritten every ``checkpoint_every`` iterations and at the end.
    ``callback(state, record)`` runs after each iteration.
    """
    Y = _as_batch(Y)
    schedule = schedule or NoiseSchedule(steps=cfg.steps)
    if schedule.steps != cfg.steps:
        raise ValueError("schedule and config disagree on the step count")
    if state is None:
        state = em_init(Y, schedule, operator, cfg, seed)
    elif state.latents.shape != Y.shape:
        raise ValueError("resumed state does not match the observations")
    log = _Telemetry(telemetry)
    history = []
    cost_cfg = cfg.cost
    try:
        while True:
            t0 = time.perf_counter()
            cache = e_step(state, model, schedule, cfg)
            Z0 = cache.estimates()
            rec = {"iteration": state.k, "tau": float(schedule.taus[state.k])}
            if cfg.track_objective:
                rec["objective_start"] = _objective(operator, state.params, Z0, Y, cost_cfg)
            losses = m_step(state, Z0, Y, operator, cfg)
            if cfg.track_objective:
                rec["objective_end"] = _objective(operator, state.params, Z0, Y, cost_cfg)
            rec["objective"] = float(np.mean(losses)) if losses else None
            if state.k == schedule.steps - 1:
                rec["latent_rms"] = float(np.sqrt(np.mean(state.latents**2)))
                rec["wall_time"] = time.perf_counter() - t0
                history.append(rec)
                log.write(rec)
                if callback is not None:
                    callback(state, rec)
                break
            upd = latent_update(state, Y, cache, operator, schedule, cfg)
            rec["zeta"] = float(np.mean(upd["zeta"]))
            rec["likelihood_cost"] = float(np.mean(upd["cost"]))
            rec["latent_rms"] = float(np.sqrt(np.mean(state.latents**2)))
            rec["wall_time"] = time.perf_counter() - t0
            history.append(rec)
            log.write(rec)
            if callback is not None:
                callback(state, rec)
            if checkpoint is not None and state.k % checkpoint_every == 0:
                state.save(checkpoint)
    except EMDivergenceError as e:
        if checkpoint is not None:
            snap = Path(str(checkpoint) + ".diverged.json")
            snap.write_text(json.dumps(e.snapshot))
        raise
    finally:
        log.close()
    if checkpoint is not None:
        state.save(checkpoint)
    return EMResult(state.params.copy(), Z0, state, history)


def config_dict(cfg: EMConfig) -> dict:
    return asdict(cfg)
