"""``blindfx`` command line: train-prior, estimate, evaluate, sweep, render.

Settings come from built-in defaults, then a YAML file (``--config``), then
flags; ``--set a.b=value`` overrides any key. Every command writes the fully
resolved config to ``config.yaml`` in its output directory, and running again
with ``--config <that file>`` reproduces the outputs.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import yaml

from . import checkpoint
from .adversarial import AdvConfig, run_adversarial
from .em import EMConfig, run_em
from .harness import (
    PRESETS,
    SplitPlan,
    SupervisedConfig,
    SweepConfig,
    WavError,
    budget_sweep,
    degradation,
    evaluate,
    load_wav_dir,
    make_splits,
    plot_data,
    preset,
    read_wav,
    supervised_train,
    synth_corpus,
    write_table,
    write_wav,
)
from .operators import build_operator, load_operator, save_operator
from .prior import DenoiserNet, DenoiserScore, DsmConfig, DsmState, GaussianAnalyticPrior, NoiseSchedule, dsm_train
from .autodiff import AdamState

OUTPUT_ENV = "BLINDFX_OUTPUT_DIR"
METHODS = ("diffusion-em", "adversarial", "supervised")
COMMANDS = ("train-prior", "estimate", "evaluate", "sweep", "render")

DEFAULTS = {
    "seed": 0,
    "output_dir": None,
    "data": {
        "corpus": "synthetic",
        "kind": "ar1",
        "ar_coef": 0.9,
        "sample_rate": 16000.0,
        "segment_len": 4096,
        "budget_s": 18.0,
        "x_paper_s": 60.0,
        "test_paper_s": 24.0,
        "effect": "light",
        "corpus_seed": None,
    },
    "prior": {
        "type": "analytic",
        "checkpoint": None,
        "sigma_min": 1e-4,
        "sigma_max": 10.0,
        "net": {},
        "dsm": {"iterations": 200, "batch_size": 4, "lr": 1e-3},
    },
    "method": "diffusion-em",
    "operator": {"kind": "wh", "config": {}},
    "em": {},
    "adversarial": {"iterations": 300, "segment_seconds": 0.25, "n_mels": 32, "batch_size": 5},
    "supervised": {},
    "sweep": {},
    "checkpoint": None,
    "expect_kind": None,
    "resume": None,
    "input": None,
    "output": None,
    "jobs": 1,
    "strict": False,
}


class UsageError(Exception):
    """Bad arguments or unusable inputs; exit code 2."""


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        nxt = node.setdefault(k, {})
        if not isinstance(nxt, dict):
            raise UsageError(f"--set {dotted}: '{k}' is not a section")
        node = nxt
    node[keys[-1]] = value


def _parse_set(item: str):
    if "=" not in item:
        raise UsageError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            loaded = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from e
        if not isinstance(loaded, dict):
            raise UsageError(f"{args.config} must hold a mapping")
        loaded.pop("command", None)
        cfg = merge(cfg, loaded)
    flags = {
        "seed": args.seed,
        "output_dir": args.output_dir,
        "method": getattr(args, "method", None),
        "operator.kind": getattr(args, "operator", None),
        "data.effect": getattr(args, "effect", None),
        "data.corpus": getattr(args, "corpus", None),
        "data.budget_s": getattr(args, "budget", None),
        "prior.type": getattr(args, "prior", None),
        "prior.checkpoint": getattr(args, "prior_checkpoint", None),
        "checkpoint": getattr(args, "checkpoint", None),
        "expect_kind": getattr(args, "expect_kind", None),
        "resume": getattr(args, "resume", None),
        "input": getattr(args, "input", None),
        "output": getattr(args, "output", None),
        "jobs": getattr(args, "jobs", None),
    }
    for key, v in flags.items():
        if v is not None:
            set_path(cfg, key, v)
    if getattr(args, "strict", False):
        cfg["strict"] = True
    for item in args.set or []:
        set_path(cfg, *_parse_set(item))
    if cfg["output_dir"] is None:
        cfg["output_dir"] = os.environ.get(OUTPUT_ENV, "blindfx-out")
    cfg["output_dir"] = str(cfg["output_dir"])
    if cfg["method"] not in METHODS:
        raise UsageError(f"unknown method {cfg['method']!r}; choose from {', '.join(METHODS)}")
    if cfg["data"]["effect"] not in PRESETS:
        raise UsageError(f"unknown effect {cfg['data']['effect']!r}; choose from {', '.join(PRESETS)}")
    return cfg


def write_resolved(cfg: dict, command: str) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.yaml"
    path.write_text(yaml.safe_dump({"command": command, **cfg}, sort_keys=True))
    return path


class JsonLines:
    def __init__(self, path):
        self.f = open(path, "w")

    def __call__(self, rec: dict):
        self.f.write(json.dumps(rec) + "\n")

    def close(self):
        self.f.close()


def split_plan(data: dict) -> SplitPlan:
    sr = float(data["sample_rate"])
    seg_s = data["segment_len"] / sr
    return SplitPlan.desk(data["budget_s"], seg_s / 6.0, seg_s, data["x_paper_s"], data["test_paper_s"], sr)


def load_corpus(cfg: dict) -> list:
    data = cfg["data"]
    if data["corpus"] == "synthetic":
        plan = split_plan(data)
        seed = cfg["seed"] if data["corpus_seed"] is None else data["corpus_seed"]
        n = plan.n_x + plan.n_y + plan.n_test
        return list(synth_corpus(data["kind"], n, data["segment_len"], data["sample_rate"], seed, data["ar_coef"]))
    path = Path(data["corpus"])
    if not path.is_dir():
        raise UsageError(f"corpus directory {path} does not exist")
    try:
        return load_wav_dir(path, data["sample_rate"])
    except WavError as e:
        raise UsageError(str(e)) from e


def build_splits(cfg: dict):
    try:
        return make_splits(load_corpus(cfg), split_plan(cfg["data"]), preset(cfg["data"]["effect"]), cfg["seed"])
    except ValueError as e:
        if isinstance(e, WavError):
            raise UsageError(str(e)) from e
        if "corpus too small" in str(e) or "shorter than" in str(e):
            raise UsageError(str(e)) from e
        raise


def _schedule(cfg: dict, steps: int = 101) -> NoiseSchedule:
    p = cfg["prior"]
    return NoiseSchedule(sigma_max=p["sigma_max"], sigma_min=p["sigma_min"], steps=steps)


def load_prior(cfg: dict, X):
    """Analytic prior fit on X, or a saved analytic / denoiser checkpoint."""
    p = cfg["prior"]
    if p["checkpoint"]:
        try:
            rec = checkpoint.load(p["checkpoint"])
        except checkpoint.CheckpointError as e:
            raise UsageError(str(e)) from e
        if rec["kind"] == "analytic-prior":
            return GaussianAnalyticPrior(**rec["config"])
        if rec["kind"] == "denoiser":
            return DenoiserScore(DenoiserNet.from_config(rec["config"]), rec["params"])
        raise UsageError(f"{p['checkpoint']} holds a '{rec['kind']}', not a prior")
    if p["type"] == "analytic":
        return GaussianAnalyticPrior.fit(X)
    raise UsageError("a denoiser prior needs prior.checkpoint (run train-prior first)")


def cmd_train_prior(cfg: dict) -> dict:
    out = Path(cfg["output_dir"])
    X = build_splits(cfg).X
    p = cfg["prior"]
    path = out / "prior.json"
    if p["type"] == "analytic":
        prior = GaussianAnalyticPrior.fit(X)
        checkpoint.save(path, "analytic-prior", prior.config(), [])
        return {"checkpoint": str(path), "ar_coef": prior.ar_coef, "variance": prior.variance}
    if p["type"] != "denoiser":
        raise UsageError(f"unknown prior type {p['type']!r} (analytic or denoiser)")
    net = DenoiserNet.from_config({"seed": cfg["seed"], **p["net"]})
    dsm = DsmConfig(**{**p["dsm"], "seed": cfg["seed"]})
    state = None
    if cfg["resume"]:
        try:
            rec = checkpoint.load(cfg["resume"], "denoiser")
        except checkpoint.CheckpointError as e:
            raise UsageError(str(e)) from e
        ex = rec["extra"]
        state = DsmState(rec["params"], AdamState.from_dict(ex["adam"]), ex["step"], ex["rng_state"], ex["losses"])
    log = JsonLines(out / "telemetry.jsonl")
    try:
        _, state = dsm_train(X, net, _schedule(cfg), dsm, state, lambda step, loss: log({"step": step, "loss": loss}))
    finally:
        log.close()
    extra = {"step": state.step, "adam": state.adam.to_dict(), "rng_state": state.rng_state, "losses": state.losses}
    checkpoint.save(path, "denoiser", net.config(), state.params, extra)
    return {"checkpoint": str(path), "step": state.step, "final_loss": state.losses[-1] if state.losses else None}


def cmd_estimate(cfg: dict) -> dict:
    method, kind = cfg["method"], cfg["operator"]["kind"]
    if method == "adversarial" and kind == "wh":
        msg = "adversarial training of the WH operator is known to be unreliable"
        if cfg["strict"]:
            raise UsageError(msg + " (refusing under --strict)")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    out = Path(cfg["output_dir"])
    op = build_operator(kind, _operator_config(cfg))
    splits = build_splits(cfg)
    seed = cfg["seed"]
    t0 = time.perf_counter()
    summary = {"method": method, "operator": kind}
    if method == "diffusion-em":
        prior = load_prior(cfg, splits.X)
        ec = EMConfig(**cfg["em"])
        res = run_em(splits.Y, prior, op, ec, seed, _schedule(cfg, ec.steps), telemetry=out / "telemetry.jsonl")
        params = res.params
        for i, z in enumerate(res.denoised):
            write_wav(out / "estimates" / f"estimate_{i:03d}.wav", z, cfg["data"]["sample_rate"])
        summary["final_objective"] = res.history[-1]["objective"] if res.history else None
    elif method == "adversarial":
        ac = AdvConfig(**{**cfg["adversarial"], "sample_rate": cfg["data"]["sample_rate"]})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = run_adversarial(splits.X, splits.Y, op, ac, seed, telemetry=out / "telemetry.jsonl")
        params = res.params
    else:
        n = min(len(splits.X), len(splits.Y))
        pairs = (splits.X[:n], preset(cfg["data"]["effect"])(splits.X[:n]))
        params, losses = supervised_train(pairs, op, SupervisedConfig(**{**cfg["supervised"], "seed": seed}))
        with open(out / "telemetry.jsonl", "w") as f:
            for i, loss in enumerate(losses):
                f.write(json.dumps({"iteration": i, "loss": loss}) + "\n")
        summary["final_loss"] = losses[-1] if losses else None
    labels = _labels(cfg)
    path = save_operator(out / "operator.json", op, params, {"labels": labels})
    # relative, so outputs from two directories compare byte for byte
    summary["checkpoint"] = path.name
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return {**summary, "checkpoint": str(path), "seconds": time.perf_counter() - t0}


def _operator_config(cfg: dict) -> dict:
    c = dict(cfg["operator"].get("config") or {})
    if cfg["operator"]["kind"] == "wh":
        c.setdefault("sample_rate", cfg["data"]["sample_rate"])
    return c


def _labels(cfg: dict) -> dict:
    return {
        "method": cfg["method"],
        "operator": cfg["operator"]["kind"],
        "budget_s": float(cfg["data"]["budget_s"]),
        "effect": cfg["data"]["effect"],
        "seed": cfg["seed"],
    }


def _load_op(path, expect_kind=None):
    if not path:
        raise UsageError("no operator checkpoint given (--checkpoint)")
    try:
        return load_operator(path, expect_kind)
    except checkpoint.CheckpointError as e:
        raise UsageError(str(e)) from e


def cmd_evaluate(cfg: dict) -> dict:
    out = Path(cfg["output_dir"])
    paths = cfg["checkpoint"] if isinstance(cfg["checkpoint"], list) else [cfg["checkpoint"]]
    splits = build_splits(cfg)
    per_segment, summary = [], []
    for p in paths:
        op, params = _load_op(p, cfg["expect_kind"])
        labels = {**_labels(cfg), "operator": op.kind, **checkpoint.load(p).get("extra", {}).get("labels", {})}
        rep = evaluate(params, op, splits.X_test, splits.Y_test, sample_rate=cfg["data"]["sample_rate"], labels=labels)
        per_segment.extend(rep.rows())
        for m, v in rep.means.items():
            summary.append({**labels, "metric": m, "value": v, "status": "ok"})
    write_table(per_segment, out, "report")
    write_table(plot_data(summary), out, "plot_data")
    return {"report": str(out / "report.csv"), "n_rows": len(per_segment)}


def cmd_sweep(cfg: dict) -> dict:
    out = Path(cfg["output_dir"])
    sc = dict(cfg["sweep"])
    sc.setdefault("sample_rate", cfg["data"]["sample_rate"])
    sc.setdefault("segment_len", cfg["data"]["segment_len"])
    sc.setdefault("corpus_kind", cfg["data"]["kind"])
    sc.setdefault("adversarial", cfg["adversarial"])
    sc.setdefault("em", cfg["em"])
    sc.setdefault("supervised", cfg["supervised"])
    sc.setdefault("seeds", [cfg["seed"]])
    try:
        scfg = SweepConfig(**sc)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad sweep config: {e}") from e
    log = JsonLines(out / "telemetry.jsonl")
    try:
        rows = budget_sweep(scfg, jobs=int(cfg["jobs"]), on_cell=lambda c, r: log({**c, "status": r[0]["status"]}))
    finally:
        log.close()
    write_table(rows, out, "results")
    write_table(plot_data(rows), out, "plot_data")
    trend = {}
    for effect in scfg.effects:
        for m in ("diffusion_em", "adversarial"):
            if m in scfg.methods and len(scfg.budgets) > 1:
                try:
                    trend[f"{m}/{effect}"] = degradation(rows, m, effect)
                except ValueError:
                    trend[f"{m}/{effect}"] = None
    (out / "degradation.json").write_text(json.dumps(trend, indent=1, sort_keys=True))
    failed = sum(r["status"] != "ok" for r in rows)
    return {"rows": len(rows), "failed_rows": failed, "degradation": trend}


def cmd_render(cfg: dict) -> dict:
    op, params = _load_op(cfg["checkpoint"])
    if not cfg["input"]:
        raise UsageError("render needs --input WAV")
    try:
        x, sr = read_wav(cfg["input"])
    except WavError as e:
        raise UsageError(str(e)) from e
    from . import autodiff as ad

    with ad.no_grad():
        y = op(x, params).data
    over = np.abs(y) > 1.0
    if over.any():
        warnings.warn(f"clamped {int(over.sum())} samples to [-1, 1]", RuntimeWarning, stacklevel=2)
        y = np.clip(y, -1.0, 1.0)
    dest = Path(cfg["output"] or Path(cfg["output_dir"]) / "render.wav")
    write_wav(dest, y, sr)
    return {"output": str(dest), "samples": int(y.size), "clamped": int(over.sum())}


HANDLERS = {
    "train-prior": cmd_train_prior,
    "estimate": cmd_estimate,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "render": cmd_render,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--output-dir", help=f"output directory (default ${OUTPUT_ENV} or ./blindfx-out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key, e.g. em.m_its=5")
    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--corpus", help="'synthetic' or a directory of WAV files")
    data.add_argument("--effect", help="ground-truth effect preset")
    data.add_argument("--budget", type=float, help="effected-data budget in paper seconds")

    parser = argparse.ArgumentParser(prog="blindfx", description="Estimate audio effects without paired data.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    p = sub.add_parser("train-prior", parents=[common, data], help="fit the clean-signal prior")
    p.add_argument("--prior", choices=("analytic", "denoiser"))
    p.add_argument("--resume", help="denoiser checkpoint to continue from")
    p = sub.add_parser("estimate", parents=[common, data], help="estimate operator parameters")
    p.add_argument("--method", help=f"one of {', '.join(METHODS)}")
    p.add_argument("--operator", choices=("wh", "gcn", "gain"))
    p.add_argument("--prior", choices=("analytic", "denoiser"))
    p.add_argument("--prior-checkpoint")
    p.add_argument("--strict", action="store_true", help="refuse discouraged method/operator pairs")
    p = sub.add_parser("evaluate", parents=[common, data], help="score operator checkpoints on the test split")
    p.add_argument("--checkpoint", nargs="+")
    p.add_argument("--operator", dest="expect_kind", choices=("wh", "gcn", "gain"), help="fail unless checkpoints hold this kind")
    p = sub.add_parser("sweep", parents=[common], help="run the budget sweep")
    p.add_argument("--jobs", type=int)
    p = sub.add_parser("render", parents=[common], help="apply an operator checkpoint to a WAV file")
    # checked after config merging, so a resolved config can supply them
    p.add_argument("--checkpoint", help="operator checkpoint (required here or in the config)")
    p.add_argument("--input", help="WAV file to process (required here or in the config)")
    p.add_argument("--output")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = resolve_config(args)
        write_resolved(cfg, args.command)
        result = HANDLERS[args.command](cfg)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"blindfx: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        print(f"blindfx: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
