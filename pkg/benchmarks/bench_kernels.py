"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Both backends are checked for agreement before timing.
"""

import argparse
import timeit

import numpy as np

from blindfx import _kernels_py

try:
    from blindfx import _kernels as _compiled
except ImportError:
    _compiled = None


def cases(rng):
    pts = np.sort(rng.uniform(-1, 1, 32))
    x = rng.uniform(-1.2, 1.2, 16 * 4096)
    g = rng.standard_normal(x.shape)
    xc = rng.standard_normal((4, 16, 4096 + 2 * 64))
    w = rng.standard_normal((16, 16, 3))
    gc = rng.standard_normal((4, 16, 4096 + 2 * 64 - 2 * 32))
    frames = rng.standard_normal((4, 61, 1024))
    return {
        "ccr_eval": lambda k: k.ccr_eval(pts, x),
        "ccr_grad_points": lambda k: k.ccr_grad_points(32, x, g),
        "conv1d_valid": lambda k: k.conv1d_valid(xc, w, 32),
        "conv1d_grad_input": lambda k: k.conv1d_grad_input(gc, w, 32, xc.shape[-1]),
        "conv1d_grad_weight": lambda k: k.conv1d_grad_weight(gc, xc, 3, 32),
        "overlap_add": lambda k: k.overlap_add(frames, 256),
    }


def _flat(r):
    if isinstance(r, tuple):
        return np.concatenate([np.ravel(a) for a in r])
    return np.ravel(r)


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled kernels not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for name, fn in cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if _compiled is None:
            print(f"{name:<20}{t_py:>10.3f}{'-':>11}{'-':>9}")
            continue
        err = np.max(np.abs(_flat(fn(_kernels_py)) - _flat(fn(_compiled))))
        if err > 1e-9:
            raise SystemExit(f"{name}: backends disagree by {err:.3g}")
        t_cy = min(timeit.repeat(lambda: fn(_compiled), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<20}{t_py:>10.3f}{t_cy:>11.3f}{t_py / t_cy:>8.1f}x")


if __name__ == "__main__":
    main()
