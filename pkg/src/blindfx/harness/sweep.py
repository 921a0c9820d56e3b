"""Grid runner comparing estimation methods across observation budgets."""

from __future__ import annotations

import csv
import itertools
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..adversarial import AdvConfig, run_adversarial
from ..em import EMConfig, run_em
from ..operators import build_operator
from ..prior import GaussianAnalyticPrior, NoiseSchedule
from .data import SplitPlan, make_splits, synth_corpus
from .effects import preset
from .evaluate import METRICS, evaluate
from .supervised import SupervisedConfig, supervised_train

METHODS = ("diffusion_em", "adversarial", "supervised")
TABLE_COLUMNS = (
    "method", "operator", "budget_s", "effect", "seed", "metric", "value", "std", "n_segments", "status", "error",
)


@dataclass
class SweepConfig:
    """Experiment grid plus the per-method settings used in every cell.

    Budgets are given in paper seconds and scaled by ``scale``; with the
    defaults a 6 s paper segment becomes a 4096-sample segment at 16 kHz.
    """

    methods: tuple = METHODS
    operators: dict = field(default_factory=lambda: {"diffusion_em": "wh", "adversarial": "gcn", "supervised": "wh"})
    budgets: tuple = (18.0, 60.0)
    effects: tuple = ("light",)
    seeds: tuple = (0, 1, 2)
    corpus_kind: str = "ar1"
    sample_rate: float = 16000.0
    segment_len: int = 4096
    x_paper_s: float = 60.0
    test_paper_s: float = 24.0
    operator_configs: dict = field(default_factory=dict)
    em: dict = field(default_factory=dict)
    adversarial: dict = field(
        default_factory=lambda: {"iterations": 300, "segment_seconds": 0.25, "n_mels": 32, "batch_size": 5}
    )
    supervised: dict = field(default_factory=dict)
    sigma_max: float = 10.0

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        self.methods = tuple(self.methods)
        self.budgets = tuple(float(b) for b in self.budgets)
        self.effects = tuple(self.effects)
        self.seeds = tuple(int(s) for s in self.seeds)

    @property
    def scale(self) -> float:
        return self.segment_len / self.sample_rate / 6.0

    def plan(self, budget_s: float) -> SplitPlan:
        return SplitPlan.desk(
            budget_s, self.scale, self.segment_len / self.sample_rate, self.x_paper_s, self.test_paper_s, self.sample_rate
        )

    def cells(self):
        for method, budget, effect, seed in itertools.product(self.methods, self.budgets, self.effects, self.seeds):
            yield {
                "method": method,
                "operator": self.operators[method],
                "budget_s": budget,
                "effect": effect,
                "seed": seed,
            }

    def to_dict(self) -> dict:
        return asdict(self)


def _operator(cfg: SweepConfig, kind: str):
    c = dict(cfg.operator_configs.get(kind, {}))
    if kind == "wh":
        c.setdefault("sample_rate", cfg.sample_rate)
    return build_operator(kind, c)


def estimate(cell: dict, cfg: SweepConfig, splits):
    """Run one method on one split; the effected set is the only view of Y."""
    op = _operator(cfg, cell["operator"])
    seed = cell["seed"]
    if cell["method"] == "supervised":
        n = min(len(splits.Y), len(splits.X))
        x = splits.X[:n]
        y = preset(cell["effect"])(x)
        sc = SupervisedConfig(**{**cfg.supervised, "seed": seed})
        params, _ = supervised_train((x, y), op, sc)
    elif cell["method"] == "diffusion_em":
        prior = GaussianAnalyticPrior.fit(splits.X)
        ec = EMConfig(**cfg.em)
        res = run_em(splits.Y.samples, prior, op, ec, seed, NoiseSchedule(sigma_max=cfg.sigma_max, steps=ec.steps))
        params = res.params
    else:
        ac = AdvConfig(**{**cfg.adversarial, "sample_rate": cfg.sample_rate})
        params = run_adversarial(splits.X, splits.Y.samples, op, ac, seed).params
    return op, params


def run_cell(cell: dict, cfg: SweepConfig) -> list[dict]:
    base = {k: cell[k] for k in ("method", "operator", "budget_s", "effect", "seed")}
    try:
        plan = cfg.plan(cell["budget_s"])
        n_src = plan.n_x + plan.n_test + cfg.plan(max(cfg.budgets)).n_y
        corpus = synth_corpus(cfg.corpus_kind, n_src, cfg.segment_len, cfg.sample_rate, seed=10_000 + cell["seed"])
        splits = make_splits(corpus, plan, preset(cell["effect"]), seed=cell["seed"])
        op, params = estimate(cell, cfg, splits)
        rep = evaluate(params, op, splits.X_test, splits.Y_test, sample_rate=cfg.sample_rate, labels=base)
    except Exception as e:  # noqa: BLE001 - a failed cell is recorded and the sweep goes on
        msg = f"{type(e).__name__}: {e}"
        detail = traceback.format_exc(limit=3)
        return [dict(base, metric=m, value=float("nan"), std=float("nan"), n_segments=0, status="error",
                     error=msg + " | " + detail.replace("\n", " ")) for m in METRICS]
    return [
        dict(base, metric=m, value=float(np.mean(v)), std=float(np.std(v)), n_segments=len(v), status="ok", error="")
        for m, v in rep.per_segment.items()
    ]


def budget_sweep(cfg: SweepConfig, jobs: int = 1, on_cell=None) -> list[dict]:
    """Run every cell; results come back in grid order whatever ``jobs`` is."""
    cells = list(cfg.cells())
    rows = []
    if jobs <= 1:
        for c in cells:
            r = run_cell(c, cfg)
            rows.extend(r)
            if on_cell is not None:
                on_cell(c, r)
        return rows
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for c, r in zip(cells, pool.map(run_cell, cells, itertools.repeat(cfg))):
            rows.extend(r)
            if on_cell is not None:
                on_cell(c, r)
    return rows


def write_table(rows: list[dict], out_dir, stem: str = "results") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = list(rows[0].keys()) if rows else list(TABLE_COLUMNS)
    csv_path = out / f"{stem}.csv"
    with open(csv_path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    json_path = out / f"{stem}.json"
    json_path.write_text(json.dumps(rows, indent=1, allow_nan=True))
    return csv_path, json_path


def plot_data(rows: list[dict]) -> list[dict]:
    """Seed-aggregated mean and std per (budget, method, operator, effect, metric)."""
    groups: dict = {}
    for r in rows:
        if r.get("status", "ok") != "ok":
            continue
        key = (r["budget_s"], r["method"], r["operator"], r["effect"], r["metric"])
        groups.setdefault(key, []).append(r["value"])
    out = []
    for (b, m, o, e, met), vals in sorted(groups.items()):
        out.append({
            "budget_s": b, "method": m, "operator": o, "effect": e, "metric": met,
            "mean": float(np.mean(vals)), "std": float(np.std(vals)), "n_seeds": len(vals),
        })
    return out


def degradation(rows: list[dict], method: str, effect: str, metric: str = "l1_log_mss") -> float:
    """Seed-averaged metric increase from the largest to the smallest budget."""
    vals: dict = {}
    for r in rows:
        if r["method"] == method and r["effect"] == effect and r["metric"] == metric and r.get("status", "ok") == "ok":
            vals.setdefault(r["seed"], {})[r["budget_s"]] = r["value"]
    diffs = []
    for by_budget in vals.values():
        if len(by_budget) >= 2:
            diffs.append(by_budget[min(by_budget)] - by_budget[max(by_budget)])
    if not diffs:
        raise ValueError(f"no completed budget pairs for {method} on {effect}")
    return float(np.mean(diffs))
