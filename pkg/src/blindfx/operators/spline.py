"""Cubic Catmull-Rom waveshaper on a fixed uniform knot grid over [-1, 1]."""

import numpy as np

from .. import autodiff as ad
from .. import kernels

N_KNOTS = 41


def knots(n: int = N_KNOTS) -> np.ndarray:
    return np.linspace(-1.0, 1.0, n)


def ccr_spline_eval(points, x) -> ad.Tensor:
    """Evaluate the spline through ``points`` at ``x``.

    Interpolates every control value exactly, is C1 everywhere, and continues
    linearly with the end-segment slope outside [-1, 1]. Differentiable in both
    ``points`` and ``x``.
    """
    points, x = ad.as_tensor(points), ad.as_tensor(x)
    if points.ndim != 1 or points.shape[0] != N_KNOTS:
        raise ValueError(f"spline needs exactly {N_KNOTS} control points, got {points.shape}")
    pd = np.ascontiguousarray(points.data)
    xd = x.data
    y, dy = kernels.ccr_eval(pd, xd)

    def vjp(g):
        return kernels.ccr_grad_points(N_KNOTS, xd, g), g * dy

    return ad.custom_op(y, (points, x), vjp, "ccr_spline")
