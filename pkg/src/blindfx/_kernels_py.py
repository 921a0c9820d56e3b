"""Pure-numpy versions of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature and
semantics; :mod:`blindfx.kernels` picks one at import time.
"""

import numpy as np

# uniform Catmull-Rom knots on [-1, 1]
CCR_LO = -1.0
CCR_HI = 1.0


def _ccr_locate(n_points, x):
    h = (CCR_HI - CCR_LO) / (n_points - 1)
    pos = (x - CCR_LO) / h
    seg = np.clip(np.floor(pos), 0, n_points - 2).astype(np.intp)
    u = pos - seg
    return h, seg, u


def _ccr_padded(points):
    # reflected phantom knots keep the end segments C1 with linear extrapolation
    return np.concatenate(
        ([2.0 * points[0] - points[1]], points, [2.0 * points[-1] - points[-2]])
    )


def ccr_eval(points, x):
    """Evaluate the spline and its slope at every entry of ``x``."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n = points.shape[0]
    h, seg, u = _ccr_locate(n, x)
    p = _ccr_padded(points)
    p0, p1, p2, p3 = p[seg], p[seg + 1], p[seg + 2], p[seg + 3]
    u2 = u * u
    u3 = u2 * u
    y = 0.5 * (
        2.0 * p1
        + (p2 - p0) * u
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u2
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * u3
    )
    dy = 0.5 * (
        (p2 - p0)
        + 2.0 * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u
        + 3.0 * (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * u2
    ) / h
    lo = x < CCR_LO
    hi = x > CCR_HI
    if lo.any():
        slope = (points[1] - points[0]) / h
        y = np.where(lo, points[0] + (x - CCR_LO) * slope, y)
        dy = np.where(lo, slope, dy)
    if hi.any():
        slope = (points[-1] - points[-2]) / h
        y = np.where(hi, points[-1] + (x - CCR_HI) * slope, y)
        dy = np.where(hi, slope, dy)
    return y, dy


def ccr_grad_points(n_points, x, g):
    """Gradient of ``sum(g * spline(x))`` with respect to the control values."""
    x = np.asarray(x, dtype=np.float64).ravel()
    g = np.asarray(g, dtype=np.float64).ravel()
    h, seg, u = _ccr_locate(n_points, x)
    u2 = u * u
    u3 = u2 * u
    w0 = 0.5 * (-u + 2.0 * u2 - u3)
    w1 = 0.5 * (2.0 - 5.0 * u2 + 3.0 * u3)
    w2 = 0.5 * (u + 4.0 * u2 - 3.0 * u3)
    w3 = 0.5 * (-u2 + u3)
    # linear extrapolation rows
    lo = x < CCR_LO
    hi = x > CCR_HI
    t_lo = (x - CCR_LO) / h
    t_hi = (x - CCR_HI) / h
    w0 = np.where(lo | hi, 0.0, w0)
    w3 = np.where(lo | hi, 0.0, w3)
    w1 = np.where(lo, 1.0 - t_lo, np.where(hi, -t_hi, w1))
    w2 = np.where(lo, t_lo, np.where(hi, 1.0 + t_hi, w2))
    seg = np.where(lo, 0, np.where(hi, n_points - 2, seg))
    padded = np.zeros(n_points + 2)
    for k, w in enumerate((w0, w1, w2, w3)):
        padded += np.bincount(seg + k, weights=g * w, minlength=n_points + 2)
    out = padded[1:-1].copy()
    out[0] += 2.0 * padded[0]
    out[1] -= padded[0]
    out[-1] += 2.0 * padded[-1]
    out[-2] -= padded[-1]
    return out


def conv1d_valid(x, w, dilation):
    """``out[b, o, t] = sum_{c, k} w[o, c, k] * x[b, c, t + k * dilation]``."""
    B, C, Lp = x.shape
    O, _, K = w.shape
    L = Lp - dilation * (K - 1)
    out = np.zeros((B, O, L))
    for k in range(K):
        xs = x[:, :, k * dilation : k * dilation + L]
        out += np.einsum("oc,bct->bot", w[:, :, k], xs, optimize=True)
    return out


def conv1d_grad_input(g, w, dilation, Lp):
    B, O, L = g.shape
    _, C, K = w.shape
    gx = np.zeros((B, C, Lp))
    for k in range(K):
        gx[:, :, k * dilation : k * dilation + L] += np.einsum(
            "oc,bot->bct", w[:, :, k], g, optimize=True
        )
    return gx


def conv1d_grad_weight(g, x, K, dilation):
    B, O, L = g.shape
    C = x.shape[1]
    gw = np.zeros((O, C, K))
    for k in range(K):
        xs = x[:, :, k * dilation : k * dilation + L]
        gw[:, :, k] = np.einsum("bot,bct->oc", g, xs, optimize=True)
    return gw


def overlap_add(frames, hop):
    """Sum frames ``[R, n, F]`` placed ``hop`` apart into ``[R, (n - 1) * hop + F]``."""
    R, n, F = frames.shape
    out = np.zeros((R, (n - 1) * hop + F))
    if F % hop == 0:
        q = F // hop
        blocks = frames.reshape(R, n, q, hop)
        for j in range(q):
            out[:, j * hop : (j + n) * hop] += blocks[:, :, j, :].reshape(R, n * hop)
    else:
        for i in range(n):
            out[:, i * hop : i * hop + F] += frames[:, i, :]
    return out
