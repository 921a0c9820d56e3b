"""STFT analysis/synthesis and the spectral costs and metrics built on it.

Frame layout: the signal is zero-padded by ``window_len - hop`` on the left and
enough on the right that every real sample is covered by the same number of
frames. Each windowed frame is centred in an ``fft_len`` buffer, so filtering
in the STFT domain with an impulse response shorter than
``(fft_len - window_len) / 2`` on either side is an exact linear convolution.
Spectrogram tensors are laid out ``[..., n_frames, n_bins]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG_FLOOR = 1e-5


class ColaError(ValueError):
    """Window/hop pair does not overlap-add to a constant."""


@dataclass(frozen=True)
class Signal:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError(f"Signal must be mono (1-D), got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("Signal contains non-finite samples")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 2048
    hop: int = 512
    fft_len: int = 4096

    def __post_init__(self):
        if min(self.window_len, self.hop, self.fft_len) < 1:
            raise ValueError("STFT sizes must be positive")
        if self.window_len > self.fft_len:
            raise ValueError(f"window_len {self.window_len} > fft_len {self.fft_len}")
        if self.hop > self.window_len:
            raise ValueError(f"hop {self.hop} > window_len {self.window_len}")

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    def layout(self, length: int) -> tuple[int, int, int]:
        """(pad_left, pad_right, n_frames) for a signal of ``length`` samples."""
        W, H = self.window_len, self.hop
        if length < 1:
            raise ValueError("empty signal")
        pad_left = W - H
        n_frames = (pad_left + length - 1) // H + 1
        pad_right = (n_frames - 1) * H + W - pad_left - length
        return pad_left, pad_right, n_frames


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass
class Spectrogram:
    re: Tensor
    im: Tensor
    config: StftConfig
    length: int

    @property
    def shape(self):
        return self.re.shape

    def magnitude(self) -> Tensor:
        return ad.complex_abs(self.re, self.im)


def _window_envelope(cfg: StftConfig, n_frames: int, power: int = 1) -> np.ndarray:
    w = hann(cfg.window_len) ** power
    frames = np.broadcast_to(w, (1, n_frames, cfg.window_len))
    from .kernels import overlap_add

    return overlap_add(np.ascontiguousarray(frames), cfg.hop)[0]


def stft(x, cfg: StftConfig = StftConfig()) -> Spectrogram:
    """Hann-windowed STFT of ``x [..., L]`` (array or Tensor, differentiable)."""
    x = ad.as_tensor(x)
    L = x.shape[-1]
    if L < cfg.window_len:
        raise ValueError(f"signal of {L} samples is shorter than one window ({cfg.window_len})")
    pad_left, pad_right, n_frames = cfg.layout(L)
    lead = [(0, 0)] * (x.ndim - 1)
    xp = ad.pad(x, lead + [(pad_left, pad_right)])
    frames = ad.frame(xp, cfg.window_len, cfg.hop) * hann(cfg.window_len)
    off = (cfg.fft_len - cfg.window_len) // 2
    if cfg.fft_len > cfg.window_len:
        frames = ad.pad(
            frames, lead + [(0, 0), (off, cfg.fft_len - cfg.window_len - off)]
        )
    re, im = ad.rfft(frames, cfg.fft_len)
    return Spectrogram(re, im, cfg, L)


def istft(spec: Spectrogram, target_len: int | None = None) -> Tensor:
    """Overlap-add inverse of :func:`stft`; exact when the window is COLA."""
    cfg = spec.config
    L = spec.length
    target_len = L if target_len is None else int(target_len)
    pad_left, _, n_frames = cfg.layout(L)
    env = _window_envelope(cfg, n_frames)[pad_left : pad_left + L]
    if env.min() <= 0 or env.max() / env.min() - 1.0 > 1e-9:
        raise ColaError(
            f"Hann window {cfg.window_len} with hop {cfg.hop} is not constant-overlap-add"
        )
    gain = float(env.mean())
    frames = ad.irfft(spec.re, spec.im, cfg.fft_len)
    y = ad.overlap_add(frames, cfg.hop)
    start = pad_left + (cfg.fft_len - cfg.window_len) // 2
    keep = min(target_len, L)
    y = y[..., start : start + keep] * (1.0 / gain)
    if target_len > keep:
        y = ad.pad(y, [(0, 0)] * (y.ndim - 1) + [(0, target_len - keep)])
    return y


def mel_filterbank(
    n_mels: int, fft_len: int, sample_rate: float, fmin: float = 20.0, fmax: float | None = None
) -> np.ndarray:
    """Triangular HTK-mel filters, shape ``[n_mels, fft_len // 2 + 1]``."""
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    fmax = sample_rate / 2 if fmax is None else fmax

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)

    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(fft_len // 2 + 1) * sample_rate / fft_len
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def log_mel(x, sample_rate: float, window_len: int, n_mels: int, fmin: float = 20.0) -> Tensor:
    """Natural-log mel magnitudes ``[..., n_mels, n_frames]`` (hop = window/4)."""
    cfg = StftConfig(window_len, window_len // 4, window_len)
    spec = stft(x, cfg)
    fb = mel_filterbank(n_mels, window_len, sample_rate, fmin=fmin)
    mel = ad.matmul(spec.magnitude(), fb.T)
    nd = mel.ndim
    mel = ad.transpose(mel, tuple(range(nd - 2)) + (nd - 1, nd - 2))
    return ad.log(ad.clamp_min(mel, LOG_FLOOR))


@dataclass(frozen=True)
class SpectralCostConfig:
    compression: float = 0.5
    stft: StftConfig = field(default_factory=lambda: StftConfig(1024, 256, 1024))

    def __post_init__(self):
        if not 0.0 < self.compression <= 1.0:
            raise ValueError("compression exponent must be in (0, 1]")


def compress(spec: Spectrogram, c: float) -> tuple[Tensor, Tensor]:
    return ad.complex_compress(spec.re, spec.im, c)


def compressed_stft_cost(
    y, y_hat, cfg: SpectralCostConfig = SpectralCostConfig(), per_example: bool = False
) -> Tensor:
    """Sum of squared differences of magnitude-compressed, phase-kept STFTs.

    Differentiable in both arguments. Batched inputs are summed unless
    ``per_example`` is set, in which case one cost per leading index is returned.
    """
    y, y_hat = ad.as_tensor(y), ad.as_tensor(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    ar, ai = compress(stft(y, cfg.stft), cfg.compression)
    br, bi = compress(stft(y_hat, cfg.stft), cfg.compression)
    dr = ar - br
    di = ai - bi
    if per_example:
        return ad.tsum(dr * dr, axis=(-2, -1)) + ad.tsum(di * di, axis=(-2, -1))
    return ad.tsum(dr * dr) + ad.tsum(di * di)


@dataclass(frozen=True)
class MssConfig:
    windows: tuple[int, ...] = (2048, 1024, 512, 256, 128, 64)

    def __post_init__(self):
        for w in self.windows:
            if w < 4 or w & (w - 1):
                raise ValueError(f"MSS window {w} is not a power of two >= 4")

    def stft_configs(self):
        return [StftConfig(w, w // 4, w) for w in self.windows]


def _mss_magnitudes(x: np.ndarray, cfg: MssConfig):
    with ad.no_grad():
        return [stft(x, c).magnitude().data for c in cfg.stft_configs()]


def _check_pair(a, b):
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def l1_mss(y_hat, y, cfg: MssConfig = MssConfig()) -> float:
    """Mean absolute STFT-magnitude difference over every (window, frame, bin)."""
    y_hat, y = _check_pair(y_hat, y)
    total, count = 0.0, 0
    for a, b in zip(_mss_magnitudes(y_hat, cfg), _mss_magnitudes(y, cfg)):
        total += np.abs(a - b).sum()
        count += a.size
    return float(total / count)


def l1_log_mss(y_hat, y, cfg: MssConfig = MssConfig()) -> float:
    """As :func:`l1_mss` on log10 magnitudes floored at 1e-5."""
    y_hat, y = _check_pair(y_hat, y)
    total, count = 0.0, 0
    for a, b in zip(_mss_magnitudes(y_hat, cfg), _mss_magnitudes(y, cfg)):
        la = np.log10(np.maximum(a, LOG_FLOOR))
        lb = np.log10(np.maximum(b, LOG_FLOOR))
        total += np.abs(la - lb).sum()
        count += a.size
    return float(total / count)


@dataclass
class Embedding:
    fn: Callable[[np.ndarray], np.ndarray]
    eps: float = 1e-8

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, dtype=np.float64)), dtype=np.float64).ravel()


def log_mel_stats_embedding(
    sample_rate: float, n_mels: int = 64, window_len: int = 1024, eps: float = 1e-8
) -> Embedding:
    """Per-band mean and standard deviation of the log-mel spectrogram.

    A deterministic stand-in for a learned audio-effects encoder; distances are
    not comparable with numbers produced by such an encoder.
    """

    def fn(x):
        with ad.no_grad():
            m = log_mel(x, sample_rate, window_len, n_mels).data
        return np.concatenate([m.mean(axis=-1), m.std(axis=-1)], axis=-1)

    return Embedding(fn, eps)


def embedding_cosine_distance(y_hat, y, emb: Embedding) -> float:
    a = emb(y_hat)
    b = emb(y)
    return float(1.0 - a @ b / max(np.linalg.norm(a) * np.linalg.norm(b), emb.eps))
