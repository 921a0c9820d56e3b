from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..dsp import Embedding, MssConfig, embedding_cosine_distance, l1_log_mss, l1_mss, log_mel_stats_embedding
from ..operators.base import OperatorModel

METRICS = ("l1_mss", "l1_log_mss", "emb_dist")
REPORT_COLUMNS = ("method", "operator", "budget_s", "effect", "seed", "segment") + METRICS


@dataclass
class MetricReport:
    """Per-segment metrics for one estimated operator on a paired test set.

    ``emb_dist`` is the cosine distance of the substitute log-mel statistics
    embedding, not of a learned effects encoder.
    """

    per_segment: dict
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        n = {len(v) for v in self.per_segment.values()}
        if len(n) != 1:
            raise ValueError("metric columns differ in length")

    @property
    def n_segments(self) -> int:
        return len(next(iter(self.per_segment.values())))

    @property
    def means(self) -> dict:
        return {k: float(np.mean(v)) for k, v in self.per_segment.items()}

    def rows(self) -> list[dict]:
        base = {k: self.labels.get(k, "") for k in REPORT_COLUMNS[:5]}
        out = []
        for i in range(self.n_segments):
            r = dict(base, segment=i)
            r.update({m: float(self.per_segment[m][i]) for m in METRICS})
            out.append(r)
        return out


def evaluate(
    params,
    operator: OperatorModel,
    X_test,
    Y_test,
    mss_cfg: MssConfig = MssConfig(),
    embedding: Embedding | None = None,
    sample_rate: float = 16000.0,
    labels: dict | None = None,
) -> MetricReport:
    X_test = np.atleast_2d(np.asarray(X_test, dtype=np.float64))
    Y_test = np.atleast_2d(np.asarray(Y_test, dtype=np.float64))
    if X_test.shape != Y_test.shape:
        raise ValueError("test inputs and targets are not paired")
    emb = embedding or log_mel_stats_embedding(sample_rate)
    cols = {m: [] for m in METRICS}
    with ad.no_grad():
        for x, y in zip(X_test, Y_test):
            y_hat = operator(x, params).data
            cols["l1_mss"].append(l1_mss(y_hat, y, mss_cfg))
            cols["l1_log_mss"].append(l1_log_mss(y_hat, y, mss_cfg))
            cols["emb_dist"].append(embedding_cosine_distance(y_hat, y, emb))
    return MetricReport({k: np.array(v) for k, v in cols.items()}, dict(labels or {}))
