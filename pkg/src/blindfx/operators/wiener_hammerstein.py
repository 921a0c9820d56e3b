"""Wiener-Hammerstein gray box: STFT-domain EQ -> spline waveshaper -> EQ."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..dsp import Spectrogram, StftConfig, istft, stft
from .base import OperatorModel
from .spline import N_KNOTS, ccr_spline_eval, knots

SOFTPLUS_ONE = float(np.log(np.e - 1.0))  # softplus(SOFTPLUS_ONE) == 1


def third_octave_grid(sample_rate: float) -> np.ndarray:
    """Third-octave centres 1000 * 2**(k/3) with 0 Hz and Nyquist anchors.

    A centre is kept when its band reaches 20 Hz (upper edge >= 20 Hz) and it
    lies strictly below Nyquist.
    """
    nyq = sample_rate / 2.0
    ks = np.arange(-40, 40)
    c = 1000.0 * 2.0 ** (ks / 3.0)
    keep = (c * 2.0 ** (1.0 / 6.0) >= 20.0) & (c < nyq)
    return np.concatenate(([0.0], c[keep], [nyq]))


def interp_matrix(grid: np.ndarray, fft_len: int, sample_rate: float) -> np.ndarray:
    """Linear interpolation weights from grid values to rfft bins, ``[n_bins, n_grid]``."""
    freqs = np.arange(fft_len // 2 + 1) * sample_rate / fft_len
    eye = np.eye(len(grid))
    return np.stack([np.interp(freqs, grid, eye[j]) for j in range(len(grid))], axis=1)


def eq_apply(x, mags_grid, phases, stft_cfg: StftConfig, interp: np.ndarray) -> ad.Tensor:
    """Filter ``x`` by interpolated grid magnitudes and per-bin phases."""
    mags_grid, phases = ad.as_tensor(mags_grid), ad.as_tensor(phases)
    if phases.shape != (stft_cfg.n_bins,):
        raise ValueError(f"expected {stft_cfg.n_bins} phases, got {phases.shape}")
    if interp.shape != (stft_cfg.n_bins, mags_grid.shape[0]):
        raise ValueError(
            f"grid of {mags_grid.shape[0]} magnitudes does not match interpolation {interp.shape}"
        )
    spec = stft(x, stft_cfg)
    mag = ad.matmul(interp, mags_grid)
    hr, hi = ad.complex_mul(spec.re, spec.im, mag * ad.cos(phases), mag * ad.sin(phases))
    return istft(Spectrogram(hr, hi, stft_cfg, spec.length))


class WienerHammerstein(OperatorModel):
    """Two frequency-domain EQs around a 41-knot Catmull-Rom waveshaper.

    Magnitudes are optimised on a third-octave grid through a softplus map and
    linearly interpolated to every FFT bin; phases are free per bin of the
    zero-padded FFT. The identity initialisation (unit magnitudes, zero phase,
    spline through y = x) makes the model an exact pass-through.

    With ``unit_gain`` each EQ's grid magnitudes are divided by their
    geometric mean, so the EQs shape the spectrum and all broadband gain
    lives in the spline. Without it, EQ2 gain and spline scale trade off
    exactly and the parameters are only defined up to that gauge.
    """

    kind = "wh"

    def __init__(
        self,
        sample_rate: float = 16000.0,
        stft_cfg: StftConfig | None = None,
        unit_gain: bool = True,
    ):
        self.sample_rate = float(sample_rate)
        self.stft_cfg = stft_cfg or StftConfig()
        self.unit_gain = bool(unit_gain)
        self.grid = third_octave_grid(self.sample_rate)
        self.interp = interp_matrix(self.grid, self.stft_cfg.fft_len, self.sample_rate)

    def config(self):
        c = self.stft_cfg
        return {
            "sample_rate": self.sample_rate,
            "window_len": c.window_len,
            "hop": c.hop,
            "fft_len": c.fft_len,
            "unit_gain": self.unit_gain,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "WienerHammerstein":
        return cls(
            cfg["sample_rate"],
            StftConfig(cfg["window_len"], cfg["hop"], cfg["fft_len"]),
            cfg.get("unit_gain", True),
        )

    @property
    def param_groups(self):
        g = (len(self.grid),)
        b = (self.stft_cfg.n_bins,)
        return {
            "eq1_mags": g,
            "eq1_phases": b,
            "spline": (N_KNOTS,),
            "eq2_mags": g,
            "eq2_phases": b,
        }

    def init_groups(self):
        g = len(self.grid)
        b = self.stft_cfg.n_bins
        return {
            "eq1_mags": np.full(g, SOFTPLUS_ONE),
            "eq1_phases": np.zeros(b),
            "spline": knots(),
            "eq2_mags": np.full(g, SOFTPLUS_ONE),
            "eq2_phases": np.zeros(b),
        }

    def magnitudes(self, params) -> tuple[np.ndarray, np.ndarray]:
        """Effective linear grid magnitudes of both EQs."""
        g = self.unflatten(params)
        with ad.no_grad():
            return self._mags(g["eq1_mags"]).data, self._mags(g["eq2_mags"]).data

    def _mags(self, raw):
        m = ad.softplus(raw)
        if not self.unit_gain:
            return m
        lm = ad.log(m)
        return ad.exp(lm - ad.mean(lm))

    def curve(self, params, x) -> np.ndarray:
        """The static nonlinearity evaluated at ``x``."""
        with ad.no_grad():
            return ccr_spline_eval(self.unflatten(params)["spline"], np.asarray(x)).data

    def forward(self, x, p):
        u = eq_apply(x, self._mags(p["eq1_mags"]), p["eq1_phases"], self.stft_cfg, self.interp)
        v = ccr_spline_eval(p["spline"], u)
        return eq_apply(v, self._mags(p["eq2_mags"]), p["eq2_phases"], self.stft_cfg, self.interp)
