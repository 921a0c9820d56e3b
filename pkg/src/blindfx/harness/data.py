"""Synthetic corpora, source-disjoint splits and WAV I/O."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import lfilter

from .effects import GroundTruthEffect, apply_ground_truth

PEAK = 0.9
PAPER_BUDGETS_S = (18.0, 60.0, 240.0, 960.0)


def _peak_normalize(x: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(x), axis=-1, keepdims=True)
    return x * (PEAK / np.maximum(peak, 1e-12))


def _ar1(rng, n: int, a: float) -> np.ndarray:
    burn = int(10 / max(1.0 - abs(a), 1e-3))
    w = rng.standard_normal(n + burn) * np.sqrt(1.0 - a * a)
    return lfilter([1.0], [1.0, -a], w)[burn:]


def _pluck_note(rng, n: int, sample_rate: float) -> np.ndarray:
    f0 = rng.uniform(80.0, 660.0)
    period = max(2, int(round(sample_rate / f0)))
    decay = rng.uniform(0.990, 0.998)
    a = np.zeros(period + 2)
    a[0] = 1.0
    a[period] = a[period + 1] = -0.5 * decay
    burst = np.zeros(n)
    burst[: min(period, n)] = rng.uniform(-1.0, 1.0, min(period, n))
    return lfilter([1.0], a, burst)


def _pluck(rng, n: int, sample_rate: float) -> np.ndarray:
    out = np.zeros(n)
    for _ in range(rng.integers(2, 5)):
        onset = int(rng.integers(0, max(1, n // 2)))
        out[onset:] += rng.uniform(0.4, 1.0) * _pluck_note(rng, n - onset, sample_rate)
    return out


def synth_corpus(
    kind: str,
    n_segments: int,
    seg_len: int,
    sample_rate: float = 16000.0,
    seed: int = 0,
    ar_coef: float = 0.9,
) -> np.ndarray:
    """``[n_segments, seg_len]`` clean test material, each row peak-normalized to 0.9.

    ar1 is unit-variance AR(1) noise before normalization; pluck sums a few
    Karplus-Strong notes at random pitches and onsets; mixture joins an
    excerpt of each kind, in random order, at a random split point.
    """
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n_segments):
        if kind == "ar1":
            x = _ar1(rng, seg_len, ar_coef)
        elif kind == "pluck":
            x = _pluck(rng, seg_len, sample_rate)
        elif kind == "mixture":
            cut = int(rng.integers(seg_len // 4, 3 * seg_len // 4 + 1))
            a = _ar1(rng, seg_len, ar_coef)
            p = _pluck(rng, seg_len, sample_rate)
            p = p / max(np.std(p), 1e-12)
            x = np.concatenate((a[:cut], p[cut:])) if rng.random() < 0.5 else np.concatenate((p[:cut], a[cut:]))
        else:
            raise ValueError(f"unknown corpus kind {kind!r}")
        rows.append(x)
    return _peak_normalize(np.stack(rows))


@dataclass(frozen=True)
class SplitPlan:
    x_seconds: float
    y_seconds: float
    test_seconds: float
    segment_seconds: float = 6.0
    sample_rate: float = 16000.0

    @property
    def segment_len(self) -> int:
        return int(round(self.segment_seconds * self.sample_rate))

    def _count(self, seconds: float) -> int:
        n = int(round(seconds / self.segment_seconds))
        if n < 1:
            raise ValueError(f"{seconds} s is shorter than one {self.segment_seconds} s segment")
        return n

    @property
    def n_x(self) -> int:
        return self._count(self.x_seconds)

    @property
    def n_y(self) -> int:
        return self._count(self.y_seconds)

    @property
    def n_test(self) -> int:
        return self._count(self.test_seconds)

    @classmethod
    def desk(
        cls,
        paper_budget_s: float,
        scale: float,
        segment_seconds: float,
        x_paper_s: float = 240.0,
        test_paper_s: float = 60.0,
        sample_rate: float = 16000.0,
    ) -> "SplitPlan":
        """A plan keeping the paper's segment counts with shorter segments.

        ``scale`` multiplies every paper duration; e.g. 6 s segments scaled to
        ``segment_seconds`` keep the 18 s budget at 3 segments.
        """
        return cls(x_paper_s * scale, paper_budget_s * scale, test_paper_s * scale, segment_seconds, sample_rate)


class EffectedSet:
    """Effected observations only: the estimation-facing view of Y.

    Holds a read-only copy of the samples and nothing that points back to
    the clean material they were made from.
    """

    __slots__ = ("_samples", "sample_rate")

    def __init__(self, samples, sample_rate: float):
        a = np.array(samples, dtype=np.float64, copy=True)
        a.setflags(write=False)
        self._samples = a
        self.sample_rate = float(sample_rate)

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    def __len__(self):
        return self._samples.shape[0]

    def __getitem__(self, i):
        return self._samples[i]

    def __iter__(self):
        return iter(self._samples)

    def __array__(self, dtype=None, copy=None):
        return self._samples if dtype is None else self._samples.astype(dtype)


@dataclass
class Splits:
    X: np.ndarray
    Y: EffectedSet
    X_test: np.ndarray
    Y_test: np.ndarray
    ids: dict = field(default_factory=dict)


def make_splits(corpus, plan: SplitPlan, effect: GroundTruthEffect, seed: int = 0) -> Splits:
    """Cut ``corpus`` into segments and assign whole sources to test, Y and X.

    Sources are shuffled per ``seed``; each split takes sources until it has
    enough segments, so no source contributes to two splits. The clean
    segments behind Y are dropped once the effect is applied.
    """
    sources = [np.asarray(c, dtype=np.float64).ravel() for c in corpus]
    L = plan.segment_len
    order = np.random.default_rng(seed).permutation(len(sources))
    needs = {"test": plan.n_test, "y": plan.n_y, "x": plan.n_x}
    taken = {k: [] for k in needs}
    it = iter(order)
    for split, need in needs.items():
        while len(taken[split]) < need:
            try:
                src = int(next(it))
            except StopIteration:
                raise ValueError(
                    f"corpus too small: {split} split needs {need} segments of {L} samples"
                ) from None
            n_seg = len(sources[src]) // L
            for k in range(min(n_seg, need - len(taken[split]))):
                taken[split].append((src, k))

    def gather(ids):
        return np.stack([sources[s][k * L : (k + 1) * L] for s, k in ids])

    x_test = gather(taken["test"])
    y_clean = gather(taken["y"])
    y = EffectedSet(apply_ground_truth(effect, y_clean), plan.sample_rate)
    del y_clean
    return Splits(
        gather(taken["x"]),
        y,
        x_test,
        apply_ground_truth(effect, x_test),
        {k: list(v) for k, v in taken.items()},
    )


class WavError(ValueError):
    pass


def read_wav(path) -> tuple[np.ndarray, float]:
    """Mono float64 samples in [-1, 1] and the sample rate; channels are averaged."""
    try:
        sr, data = wavfile.read(str(path))
    except (OSError, ValueError) as e:
        raise WavError(f"cannot read {path}: {e}") from e
    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:
        x = data / 2147483648.0
    elif data.dtype.kind == "f":
        x = data.astype(np.float64)
    else:
        raise WavError(f"unsupported sample format {data.dtype} in {path}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return x, float(sr)


def write_wav(path, x, sample_rate: float) -> Path:
    """32-bit float WAV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), int(round(sample_rate)), np.asarray(x, dtype=np.float32))
    return path


def load_wav_dir(directory, sample_rate: float | None = None) -> list[np.ndarray]:
    """All ``*.wav`` files in a directory, sorted by name."""
    out = []
    files = sorted(Path(directory).glob("*.wav"))
    if not files:
        raise WavError(f"no WAV files in {directory}")
    for f in files:
        x, sr = read_wav(f)
        if sample_rate is not None and sr != sample_rate:
            raise WavError(f"{f} has sample rate {sr}, expected {sample_rate}")
        out.append(x)
    return out
