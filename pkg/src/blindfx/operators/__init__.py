from .base import GainOperator, OperatorModel
from .gcn import GatedConvNet
from .spline import N_KNOTS, ccr_spline_eval, knots
from .wiener_hammerstein import (
    SOFTPLUS_ONE,
    WienerHammerstein,
    eq_apply,
    interp_matrix,
    third_octave_grid,
)


def build_operator(kind: str, config: dict | None = None) -> OperatorModel:
    """Operator of ``kind``; keys missing from ``config`` keep their defaults."""
    config = dict(config or {})
    if kind == "wh":
        return WienerHammerstein.from_config({**WienerHammerstein().config(), **config})
    if kind == "gcn":
        return GatedConvNet.from_config({**GatedConvNet().config(), **config})
    if kind == "gain":
        return GainOperator(**config)
    raise ValueError(f"unknown operator kind '{kind}' (expected wh, gcn or gain)")


def save_operator(path, op: OperatorModel, params, extra=None):
    from .. import checkpoint

    return checkpoint.save(path, op.kind, op.config(), params, extra)


def load_operator(path, expect_kind: str | None = None):
    """Return ``(operator, params)`` from a checkpoint."""
    from .. import checkpoint

    rec = checkpoint.load(path, expect_kind)
    op = build_operator(rec["kind"], rec["config"])
    if rec["params"].shape != (op.param_count,):
        raise checkpoint.CheckpointError(
            f"{path}: {rec['params'].size} parameters but a {op.kind} needs {op.param_count}"
        )
    return op, rec["params"]


__all__ = [
    "GainOperator",
    "GatedConvNet",
    "N_KNOTS",
    "OperatorModel",
    "SOFTPLUS_ONE",
    "WienerHammerstein",
    "build_operator",
    "ccr_spline_eval",
    "eq_apply",
    "interp_matrix",
    "knots",
    "load_operator",
    "save_operator",
    "third_octave_grid",
]
