from .optim import AdamState, adam_step
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    clamp_min,
    complex_abs,
    complex_compress,
    complex_mul,
    concat,
    conv1d,
    conv2d,
    cos,
    custom_op,
    div,
    exp,
    frame,
    getitem,
    grad,
    irfft,
    is_grad_enabled,
    leaky_relu,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    overlap_add,
    pad,
    power,
    reshape,
    rfft,
    sigmoid,
    sin,
    softplus,
    sqrt,
    stack,
    sub,
    tabs,
    tanh,
    transpose,
    tsum,
)

__all__ = [name for name in dir() if not name.startswith("_")]
