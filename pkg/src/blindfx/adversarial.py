"""Hinge-loss adversarial operator estimation with log-mel discriminators."""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step
from .dsp import log_mel
from .operators.base import OperatorModel


class AdversarialDivergenceError(FloatingPointError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


CHANNELS = (16, 32, 64, 64)


class Discriminator(OperatorModel):
    """Log-mel front end, four 3x3 convs (stride 2 along time), mean pool, linear head."""

    kind = "disc"

    def __init__(self, window_len: int = 1024, n_mels: int = 64, sample_rate: float = 16000.0, seed: int = 0):
        self.window_len = window_len
        self.n_mels = n_mels
        self.sample_rate = float(sample_rate)
        self.seed = seed

    def config(self):
        return {
            "window_len": self.window_len,
            "n_mels": self.n_mels,
            "sample_rate": self.sample_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_config(cls, cfg):
        return cls(**cfg)

    @property
    def param_groups(self):
        g = {}
        c_in = 1
        for i, c in enumerate(CHANNELS):
            g[f"conv{i}_w"] = (c, c_in, 3, 3)
            g[f"conv{i}_b"] = (c,)
            c_in = c
        g["head_w"] = (c_in, 1)
        g["head_b"] = (1,)
        return g

    def init_groups(self):
        rng = np.random.default_rng(self.seed)
        out = {}
        for name, shape in self.param_groups.items():
            if len(shape) == 1:
                out[name] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
                out[name] = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        return out

    def forward(self, x, p):
        raise TypeError("use Discriminator.score(x, params)")

    def score(self, x, params) -> Tensor:
        """One real score per segment of ``x [B, L]``."""
        p = self.split(ad.as_tensor(params))
        x = ad.as_tensor(x)
        if x.ndim == 1:
            x = ad.reshape(x, (1, -1))
        m = log_mel(x, self.sample_rate, self.window_len, self.n_mels) * 0.25
        h = ad.reshape(m, (m.shape[0], 1) + m.shape[1:])
        for i in range(len(CHANNELS)):
            h = ad.conv2d(h, p[f"conv{i}_w"], p[f"conv{i}_b"], stride=(1, 2), padding=(1, 1))
            h = ad.leaky_relu(h, 0.2)
        pooled = ad.mean(h, axis=(2, 3))
        return ad.reshape(ad.matmul(pooled, p["head_w"]) + p["head_b"], (-1,))


def disc_hinge_loss(d_real, d_fake) -> Tensor:
    d_real, d_fake = ad.as_tensor(d_real), ad.as_tensor(d_fake)
    if d_real.size == 0 or d_fake.size == 0:
        raise ValueError("empty score batch")
    real = ad.mean(ad.clamp_min(1.0 - d_real, 0.0))
    fake = ad.mean(ad.clamp_min(1.0 + d_fake, 0.0))
    return real + fake


def gen_loss(d_fake) -> Tensor:
    d_fake = ad.as_tensor(d_fake)
    if d_fake.size == 0:
        raise ValueError("empty score batch")
    return -ad.mean(d_fake)


class SegmentSampler:
    """Draws random fixed-length crops from one corpus with its own RNG.

    The clean and effected corpora each get their own sampler, so no index
    is ever shared between them.
    """

    def __init__(self, corpus, seg_len: int, rng: np.random.Generator):
        self.corpus = [np.asarray(getattr(c, "samples", c), dtype=np.float64) for c in corpus]
        if not self.corpus:
            raise ValueError("empty corpus")
        self.seg_len = seg_len
        self.rng = rng
        self.usable = [i for i, c in enumerate(self.corpus) if len(c) >= seg_len]
        if not self.usable:
            raise ValueError(f"no signal is at least {seg_len} samples long")

    def draw(self, batch: int) -> np.ndarray:
        out = np.empty((batch, self.seg_len))
        for b in range(batch):
            c = self.corpus[self.usable[self.rng.integers(len(self.usable))]]
            start = self.rng.integers(0, len(c) - self.seg_len + 1)
            out[b] = c[start : start + self.seg_len]
        return out


@dataclass
class AdvConfig:
    iterations: int = 5000
    batch_size: int = 5
    segment_seconds: float = 1.5
    sample_rate: float = 16000.0
    windows: tuple = (512, 1024, 2048)
    n_mels: int = 64
    disc_lr: float = 1e-4
    disc_betas: tuple = (0.5, 0.9)
    gen_lr: float = 1e-3
    gen_betas: tuple = (0.9, 0.99)
    gen_weight_decay: float = 0.0
    disc_steps: int = 1

    def __post_init__(self):
        self.windows = tuple(self.windows)
        self.disc_betas = tuple(self.disc_betas)
        self.gen_betas = tuple(self.gen_betas)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.segment_len < max(self.windows):
            raise ValueError("segments are shorter than the largest discriminator window")

    @property
    def segment_len(self) -> int:
        return int(round(self.segment_seconds * self.sample_rate))


@dataclass
class AdvResult:
    params: np.ndarray
    disc_params: list
    telemetry: list = field(default_factory=list)


def _digest(a: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(a).tobytes()).hexdigest()


def run_adversarial(
    X,
    Y,
    operator: OperatorModel,
    cfg: AdvConfig = AdvConfig(),
    seed: int = 0,
    telemetry=None,
    check_invariants: bool = False,
    init_params: np.ndarray | None = None,
) -> AdvResult:
    """Alternate discriminator and operator updates on unpaired batches.

    ``X`` and ``Y`` are independent corpora; each is cropped by its own
    sampler. ``telemetry`` is a path or stream for JSON lines. With
    ``check_invariants`` every phase verifies by hash that it left the other
    side's parameters untouched.
    """
    if operator.kind == "wh":
        warnings.warn(
            "adversarial training of the Wiener-Hammerstein operator is known to collapse",
            RuntimeWarning,
            stacklevel=2,
        )
    root = np.random.SeedSequence(seed)
    sx_seed, sy_seed, init_seed = root.spawn(3)
    sx = SegmentSampler(X, cfg.segment_len, np.random.default_rng(sx_seed))
    sy = SegmentSampler(Y, cfg.segment_len, np.random.default_rng(sy_seed))
    disc_seeds = np.random.default_rng(init_seed).integers(0, 2**31, size=len(cfg.windows))
    discs = [
        Discriminator(w, cfg.n_mels, cfg.sample_rate, int(s)) for w, s in zip(cfg.windows, disc_seeds)
    ]
    phi = [d.init_params() for d in discs]
    b1, b2 = cfg.disc_betas
    phi_opt = [AdamState(lr=cfg.disc_lr, beta1=b1, beta2=b2) for _ in discs]
    psi = operator.init_params() if init_params is None else np.array(init_params, dtype=np.float64)
    g1, g2 = cfg.gen_betas
    psi_opt = AdamState(lr=cfg.gen_lr, beta1=g1, beta2=g2, weight_decay=cfg.gen_weight_decay)

    own = telemetry is not None and not hasattr(telemetry, "write")
    sink = open(telemetry, "a") if own else telemetry
    log = []
    try:
        for it in range(cfg.iterations):
            psi_hash = _digest(psi) if check_invariants else None
            for _ in range(cfg.disc_steps):
                xb = sx.draw(cfg.batch_size)
                yb = sy.draw(cfg.batch_size)
                with ad.no_grad():
                    fake = operator(xb, psi).data
                d_losses = []
                for j, d in enumerate(discs):
                    pt = Tensor(phi[j], requires_grad=True)
                    loss = disc_hinge_loss(d.score(yb, pt), d.score(fake, pt))
                    if not np.isfinite(loss.item()):
                        raise AdversarialDivergenceError(
                            f"non-finite discriminator loss at iteration {it}",
                            {"iteration": it, "window": d.window_len, "psi": psi.tolist()},
                        )
                    (g,) = ad.grad(loss, [pt])
                    (phi[j],), phi_opt[j] = adam_step([phi[j]], [g], phi_opt[j])
                    d_losses.append(loss.item())
            if check_invariants and _digest(psi) != psi_hash:
                raise AssertionError("discriminator update modified operator parameters")

            phi_hash = [_digest(p) for p in phi] if check_invariants else None
            xb = sx.draw(cfg.batch_size)
            pt = Tensor(psi, requires_grad=True)
            fake = operator(xb, pt)
            gl = None
            for j, d in enumerate(discs):
                term = gen_loss(d.score(fake, phi[j]))
                gl = term if gl is None else gl + term
            if not np.isfinite(gl.item()):
                raise AdversarialDivergenceError(
                    f"non-finite operator loss at iteration {it}", {"iteration": it, "psi": psi.tolist()}
                )
            (g,) = ad.grad(gl, [pt])
            (psi,), psi_opt = adam_step([psi], [g], psi_opt)
            if check_invariants and [_digest(p) for p in phi] != phi_hash:
                raise AssertionError("operator update modified discriminator parameters")

            rec = {
                "iteration": it,
                "disc_loss": dict(zip((str(w) for w in cfg.windows), d_losses)),
                "gen_loss": gl.item(),
            }
            log.append(rec)
            if sink is not None:
                sink.write(json.dumps(rec) + "\n")
    finally:
        if own:
            sink.close()
    return AdvResult(psi, phi, log)


@dataclass
class CollapseReport:
    too_strong: bool
    too_weak: bool
    notes: list

    @property
    def healthy(self) -> bool:
        return not (self.too_strong or self.too_weak)


def _mean_disc_loss(rec) -> float:
    d = rec["disc_loss"]
    vals = list(d.values()) if isinstance(d, dict) else np.atleast_1d(d)
    return float(np.mean(vals))


def collapse_diagnostics(telemetry, window: int = 500, low: float = 0.05, pinned_tol: float = 0.05) -> CollapseReport:
    """Advisory flags for a discriminator that wins outright or never learns.

    ``too_strong``: mean discriminator loss stays below ``low`` over a whole
    window while the operator loss rises across it. ``too_weak``: the loss
    stays within ``pinned_tol`` of 2 over a whole window. Windows shrink to
    the log length for logs shorter than ``window``.
    """
    if len(telemetry) < 100:
        raise ValueError("need at least 100 logged iterations")
    d = np.array([_mean_disc_loss(r) for r in telemetry])
    g = np.array([float(r["gen_loss"]) for r in telemetry])
    w = min(window, len(d))
    notes = []
    strong = weak = False
    for start in range(0, len(d) - w + 1, max(1, w // 10)):
        sl = slice(start, start + w)
        if not strong and np.all(d[sl] < low):
            slope = np.polyfit(np.arange(w), g[sl], 1)[0]
            if slope > 0:
                strong = True
                notes.append(f"discriminator loss < {low} with rising operator loss from iteration {start}")
        if not weak and np.all(np.abs(d[sl] - 2.0) < pinned_tol):
            weak = True
            notes.append(f"discriminator loss pinned at 2 from iteration {start}")
    return CollapseReport(strong, weak, notes)


def config_dict(cfg: AdvConfig) -> dict:
    return asdict(cfg)
