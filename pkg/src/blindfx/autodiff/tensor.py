"""Define-by-run reverse-mode automatic differentiation on float64 arrays.

Every op returns a new :class:`Tensor`. When gradients are enabled and any
input requires them, the result records its parents and a vector-Jacobian
closure. Node ids come from a global counter, so sorting by id is a valid
topological order: parents are always older than children.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .. import kernels

_ids = itertools.count()
_local = threading.local()


class NonFiniteError(FloatingPointError):
    """A forward value or gradient contained NaN or Inf."""


class ShapeError(ValueError):
    pass


def is_grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "id", "_parents", "_vjp")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = op
        self.id = next(_ids)
        self._parents: tuple = ()
        self._vjp = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return len(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"item() needs a single element, got shape {self.shape}")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def custom_op(
    out: np.ndarray,
    parents: Sequence[Tensor],
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    op: str,
) -> Tensor:
    """Wrap a forward value computed outside this module as a graph node.

    ``vjp(g)`` must return one gradient (or None) per parent.
    """
    out = np.asarray(out, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        shapes = ", ".join(str(p.shape) for p in parents)
        raise NonFiniteError(f"{op}: non-finite output (input shapes {shapes})")
    t = Tensor(out, op=op)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._vjp = vjp
    return t


def backward(root: Tensor) -> dict[int, np.ndarray]:
    """Propagate d(root)/d(node) to every node that requires grad.

    Returns a map from node id to gradient. Leaf tensors also get ``.grad``
    set (accumulated).
    """
    if root.data.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    order = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.id in order:
            continue
        order[node.id] = node
        for p in node._parents:
            if p.requires_grad and p.id not in order:
                stack.append(p)
    grads: dict[int, np.ndarray] = {root.id: np.ones_like(root.data)}
    for nid in sorted(order, reverse=True):
        node = order[nid]
        g = grads.get(nid)
        if g is None:
            continue
        if node._vjp is None:
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient reached leaf of shape {node.shape}")
            node.grad = g if node.grad is None else node.grad + g
            continue
        pgs = node._vjp(g)
        for parent, pg in zip(node._parents, pgs):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.data.shape:
                pg = _unbroadcast(pg, parent.data.shape)
            prev = grads.get(parent.id)
            grads[parent.id] = pg if prev is None else prev + pg
    return grads


def grad(root: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of ``root`` for each tensor in ``wrt``; zeros where unreached."""
    for w in wrt:
        w.grad = None
    g = backward(root)
    return [g.get(w.id, np.zeros_like(w.data)) for w in wrt]


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_check(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise binary -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return custom_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return custom_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data
    return custom_op(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return custom_op(out, (a, b), lambda g: (g / bd, -g * out / bd), "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return custom_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    p = float(p)
    return custom_op(ad**p, (a,), lambda g: (g * p * ad ** (p - 1.0),), "pow")


# -- elementwise unary --------------------------------------------------------


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return custom_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return custom_op(out, (a,), lambda g: (g / ad,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return custom_op(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return custom_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x):
    return expit(x)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return custom_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out = np.logaddexp(0.0, ad)
    return custom_op(out, (a,), lambda g: (g * _sigmoid(ad),), "softplus")


def leaky_relu(a, slope: float = 0.0) -> Tensor:
    """max(x, 0) + slope * min(x, 0); the gradient at 0 is ``slope``."""
    a = as_tensor(a)
    ad = a.data
    pos = ad > 0
    out = np.where(pos, ad, slope * ad)
    return custom_op(out, (a,), lambda g: (np.where(pos, g, slope * g),), "relu_like")


def tabs(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return custom_op(np.abs(ad), (a,), lambda g: (g * np.sign(ad),), "abs")


def cos(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return custom_op(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),), "cos")


def sin(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return custom_op(np.sin(ad), (a,), lambda g: (g * np.cos(ad),), "sin")


def clamp_min(a, floor: float) -> Tensor:
    """max(x, floor) with zero gradient where the floor is active."""
    a = as_tensor(a)
    keep = a.data > floor
    out = np.where(keep, a.data, floor)
    return custom_op(out, (a,), lambda g: (np.where(keep, g, 0.0),), "clamp_min")


# -- reductions and shape -----------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return custom_op(out, (a,), vjp, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from None
    return custom_op(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return custom_op(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g) if _fancy(idx) else _assign_add(full, idx, g)
        return (full,)

    return custom_op(a.data[idx], (a,), vjp, "slice")


def _fancy(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _assign_add(full, idx, g):
    full[idx] += g


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        shapes = [t.shape for t in ts]
        raise ShapeError(f"concat: incompatible shapes {shapes} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return custom_op(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)
    n = len(ts)
    return custom_op(
        out, ts, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)), "stack"
    )


def pad(a, widths: Sequence[tuple[int, int]]) -> Tensor:
    """Zero padding; ``widths`` has one (before, after) pair per dimension."""
    a = as_tensor(a)
    widths = [tuple(w) for w in widths]
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return custom_op(np.pad(a.data, widths), (a,), lambda g: (g[sl],), "pad")


# -- linear algebra -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 1 or bd.ndim < 1 or ad.shape[-1] != bd.shape[-2 if bd.ndim > 1 else 0]:
        raise ShapeError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")
    out = np.matmul(ad, bd)

    def vjp(g):
        if bd.ndim == 1:
            ga = np.multiply.outer(g, bd) if ad.ndim > 1 else g * bd
            gb = np.tensordot(g, ad, axes=(tuple(range(g.ndim)), tuple(range(ad.ndim - 1))))
            return ga, gb
        if ad.ndim == 1:
            ga = np.matmul(g, np.swapaxes(bd, -1, -2))
            gb = np.multiply.outer(ad, g)
            return ga, gb
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return ga, gb

    return custom_op(out, (a, b), vjp, "matmul")


def conv1d(x, w, bias=None, dilation: int = 1, padding: str | tuple[int, int] = "causal") -> Tensor:
    """Dilated 1-D convolution of ``x [B, C, L]`` with ``w [O, C, K]``.

    ``padding='causal'`` pads ``dilation * (K - 1)`` zeros on the left, so the
    output at time t only sees inputs up to t. ``'same'`` pads symmetrically.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d_dilated: incompatible shapes {x.shape} and {w.shape}")
    if dilation < 1:
        raise ValueError("conv1d_dilated: dilation must be >= 1")
    K = w.shape[2]
    span = dilation * (K - 1)
    if padding == "causal":
        left, right = span, 0
    elif padding == "same":
        left, right = span // 2, span - span // 2
    else:
        left, right = padding
    xd = x.data
    if left or right:
        xd = np.pad(xd, ((0, 0), (0, 0), (left, right)))
    wd = np.ascontiguousarray(w.data)
    xd = np.ascontiguousarray(xd)
    out = kernels.conv1d_valid(xd, wd, dilation)
    Lp = xd.shape[2]
    L = x.shape[2]

    def vjp(g):
        g = np.ascontiguousarray(g)
        gx = kernels.conv1d_grad_input(g, wd, dilation, Lp)[:, :, left : left + L]
        gw = kernels.conv1d_grad_weight(g, xd, K, dilation)
        return gx, gw

    y = custom_op(out, (x, w), vjp, "conv1d_dilated")
    if bias is not None:
        y = add(y, reshape(bias, (1, -1, 1)))
    return y


def conv2d(x, w, bias=None, stride: tuple[int, int] = (1, 1), padding: tuple[int, int] = (1, 1)) -> Tensor:
    """2-D convolution of ``x [B, C, H, W]`` with ``w [O, C, kh, kw]``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: incompatible shapes {x.shape} and {w.shape}")
    sh, sw = stride
    ph, pw = padding
    O, C, kh, kw = w.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    B, _, Hp, Wp = xp.shape
    Ho = (Hp - kh) // sh + 1
    Wo = (Wp - kw) // sw + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {w.shape}")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (Ho - 1) * sh + 1 : sh, : (Wo - 1) * sw + 1 : sw]  # B C Ho Wo kh kw
    # im2col as [B*Ho*Wo, C*kh*kw] so both passes are plain matrix products
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * kh * kw)
    wm = w.data.reshape(O, C * kh * kw)
    out = (cols @ wm.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    def vjp(g):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(B * Ho * Wo, O)
        gw = (gm.T @ cols).reshape(O, C, kh, kw) if w.requires_grad else None
        if not x.requires_grad:
            return None, gw
        gcols = (gm @ wm).reshape(B, Ho, Wo, C, kh, kw).transpose(0, 3, 4, 5, 1, 2).copy()
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + (Ho - 1) * sh + 1 : sh, j : j + (Wo - 1) * sw + 1 : sw] += gcols[:, :, i, j]
        return gxp[:, :, ph : ph + x.shape[2], pw : pw + x.shape[3]], gw

    y = custom_op(out, (x, w), vjp, "conv2d")
    if bias is not None:
        y = add(y, reshape(bias, (1, -1, 1, 1)))
    return y


# -- spectral -----------------------------------------------------------------


def rfft(x, n: int) -> tuple[Tensor, Tensor]:
    """Real FFT along the last axis, returned as (re, im) tensors."""
    x = as_tensor(x)
    if x.shape[-1] > n:
        raise ShapeError(f"rfft: input length {x.shape[-1]} exceeds fft size {n}")
    L = x.shape[-1]
    spec = np.fft.rfft(x.data, n=n, axis=-1)
    packed = np.stack([spec.real, spec.imag])
    scale = np.full(n // 2 + 1, 0.5)
    scale[0] = 1.0
    if n % 2 == 0:
        scale[-1] = 1.0

    def vjp(g):
        G = (g[0] + 1j * g[1]) * scale
        return (n * np.fft.irfft(G, n=n, axis=-1)[..., :L],)

    both = custom_op(packed, (x,), vjp, "rfft")
    return both[0], both[1]


def irfft(re, im, n: int) -> Tensor:
    """Inverse real FFT along the last axis from (re, im) halves."""
    re, im = as_tensor(re), as_tensor(im)
    if re.shape != im.shape or re.shape[-1] != n // 2 + 1:
        raise ShapeError(f"irfft: bad half-spectrum shapes {re.shape}, {im.shape} for n={n}")
    out = np.fft.irfft(re.data + 1j * im.data, n=n, axis=-1)
    c = np.full(n // 2 + 1, 2.0 / n)
    c[0] = 1.0 / n
    if n % 2 == 0:
        c[-1] = 1.0 / n
    ci = c.copy()
    ci[0] = 0.0
    if n % 2 == 0:
        ci[-1] = 0.0

    def vjp(g):
        G = np.fft.rfft(g, axis=-1)
        return G.real * c, G.imag * ci

    return custom_op(out, (re, im), vjp, "irfft")


def frame(x, frame_len: int, hop: int) -> Tensor:
    """Slice the last axis into overlapping frames ``[..., n_frames, frame_len]``."""
    x = as_tensor(x)
    L = x.shape[-1]
    if L < frame_len:
        raise ShapeError(f"frame: signal length {L} shorter than frame {frame_len}")
    n = (L - frame_len) // hop + 1
    out = np.lib.stride_tricks.sliding_window_view(x.data, frame_len, axis=-1)[..., ::hop, :][
        ..., :n, :
    ].copy()
    lead = x.shape[:-1]

    def vjp(g):
        flat = kernels.overlap_add(np.ascontiguousarray(g.reshape(-1, n, frame_len)), hop)
        full = np.zeros((flat.shape[0], L))
        full[:, : flat.shape[1]] = flat
        return (full.reshape(lead + (L,)),)

    return custom_op(out, (x,), vjp, "frame")


def overlap_add(frames, hop: int) -> Tensor:
    """Inverse of :func:`frame`: sum frames placed ``hop`` apart."""
    frames = as_tensor(frames)
    *lead, n, F = frames.shape
    flat = kernels.overlap_add(np.ascontiguousarray(frames.data.reshape(-1, n, F)), hop)
    out = flat.reshape(tuple(lead) + (flat.shape[-1],))

    def vjp(g):
        win = np.lib.stride_tricks.sliding_window_view(g, F, axis=-1)[..., ::hop, :][..., :n, :]
        return (win.copy(),)

    return custom_op(out, (frames,), vjp, "overlap_add")


def complex_mul(ar, ai, br, bi) -> tuple[Tensor, Tensor]:
    """(ar + i ai)(br + i bi) on paired real tensors."""
    return sub(mul(ar, br), mul(ai, bi)), add(mul(ar, bi), mul(ai, br))


def complex_abs(re, im) -> Tensor:
    """|z| with gradient 0 at z = 0."""
    re, im = as_tensor(re), as_tensor(im)
    r = np.hypot(re.data, im.data)
    safe = np.where(r > 0, r, 1.0)

    def vjp(g):
        s = np.where(r > 0, g / safe, 0.0)
        return s * re.data, s * im.data

    return custom_op(r, (re, im), vjp, "complex_abs")


def complex_compress(re, im, c: float) -> tuple[Tensor, Tensor]:
    """|z|^c * z/|z| on paired tensors: magnitude compressed, phase kept, 0 -> 0."""
    re, im = as_tensor(re), as_tensor(im)
    rd, idd = re.data, im.data
    r = np.hypot(rd, idd)
    nz = r > 0
    safe = np.where(nz, r, 1.0)
    s = np.where(nz, safe ** (c - 1.0), 0.0)
    packed = np.stack([s * rd, s * idd])

    def vjp(g):
        gr, gi = g[0], g[1]
        k = np.where(nz, (c - 1.0) * safe ** (c - 3.0), 0.0) * (rd * gr + idd * gi)
        return s * gr + k * rd, s * gi + k * idd

    both = custom_op(packed, (re, im), vjp, "complex_compress")
    return both[0], both[1]
