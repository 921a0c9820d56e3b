"""Hot-loop kernels: compiled Cython when available, numpy otherwise.

Set ``BLINDFX_PURE_PYTHON=1`` before import to force the numpy versions.
``BACKEND`` reports which one is active.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("BLINDFX_PURE_PYTHON", "") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

ccr_eval = _impl.ccr_eval
ccr_grad_points = _impl.ccr_grad_points
conv1d_valid = _impl.conv1d_valid
conv1d_grad_input = _impl.conv1d_grad_input
conv1d_grad_weight = _impl.conv1d_grad_weight
overlap_add = _impl.overlap_add

__all__ = [
    "BACKEND",
    "ccr_eval",
    "ccr_grad_points",
    "conv1d_valid",
    "conv1d_grad_input",
    "conv1d_grad_weight",
    "overlap_add",
]
