from .data import (
    PAPER_BUDGETS_S,
    EffectedSet,
    SplitPlan,
    Splits,
    WavError,
    load_wav_dir,
    make_splits,
    read_wav,
    synth_corpus,
    write_wav,
)
from .effects import PRESETS, GroundTruthEffect, apply_ground_truth, preset
from .evaluate import METRICS, REPORT_COLUMNS, MetricReport, evaluate
from .supervised import SupervisedConfig, supervised_train
from .sweep import SweepConfig, budget_sweep, degradation, plot_data, run_cell, write_table

__all__ = [
    "EffectedSet",
    "GroundTruthEffect",
    "METRICS",
    "MetricReport",
    "PAPER_BUDGETS_S",
    "PRESETS",
    "REPORT_COLUMNS",
    "SplitPlan",
    "Splits",
    "SupervisedConfig",
    "SweepConfig",
    "WavError",
    "apply_ground_truth",
    "budget_sweep",
    "degradation",
    "evaluate",
    "load_wav_dir",
    "make_splits",
    "plot_data",
    "preset",
    "read_wav",
    "run_cell",
    "supervised_train",
    "synth_corpus",
    "write_table",
    "write_wav",
]
