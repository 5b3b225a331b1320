"""Compiled vs NumPy kernel timings.

    python3 benchmarks/bench_kernels.py [--sizes 128 256 512] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from sqgpatch import _kernels_py
from sqgpatch.curvekit import circle, ellipse, spectral_derivative

try:
    from sqgpatch import _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


def _cases(M):
    z = ellipse((0.0, 0.0), 1.0, 0.7, 0.3, M).samples
    dz = spectral_derivative(z, 1)
    src = circle((2.5, 0.0), 1.0, M).samples
    dsrc = spectral_derivative(src, 1)
    h = 2 * np.pi / M
    x = np.random.default_rng(0).uniform(-3, 3, size=(M, 2))
    return {
        "pair_sum self": lambda m: m.pair_sum(z, dz, z, dz, 0.25, 0.0, h, 1),
        "pair_sum cross": lambda m: m.pair_sum(z, dz, src, dsrc, 0.25, 0.0, h, 0),
        "boundary_sum": lambda m: m.boundary_sum(x, z, dz, 0.25, 0.0, h),
        "boundary_grad_sum": lambda m: m.boundary_grad_sum(x, z, dz, 0.25, 0.0, h),
        "chord_arc_sup": lambda m: m.chord_arc_sup(z),
    }


def _best(fn, repeat):
    n, _ = timeit.Timer(fn).autorange()
    return min(timeit.repeat(fn, number=n, repeat=repeat)) / n


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[128, 256, 512])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    print(f"{'kernel':<20}{'M':>6}{'numpy ms':>12}{'compiled ms':>13}{'speedup':>9}{'max rel diff':>14}")
    for M in args.sizes:
        for name, call in _cases(M).items():
            tp = _best(lambda: call(_kernels_py), args.repeat)
            if _kernels_c is None:
                print(f"{name:<20}{M:>6}{tp * 1e3:>12.3f}{'n/a':>13}")
                continue
            tc = _best(lambda: call(_kernels_c), args.repeat)
            a, b = call(_kernels_py), call(_kernels_c)
            a, b = (a[0], b[0]) if isinstance(a, tuple) else (a, b)
            diff = float(np.max(np.abs(np.asarray(a) - np.asarray(b))) / max(np.max(np.abs(a)), 1e-300))
            print(f"{name:<20}{M:>6}{tp * 1e3:>12.3f}{tc * 1e3:>13.3f}{tp / tc:>9.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
