"""Compiled vs pure-Python extension kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times each kernel on both backends, checks that they agree, and prints one
line per kernel with the speedup.  Exits 1 if the compiled module is missing.
"""
import argparse
import sys
import timeit

import numpy as np

from fraclab import _kernels_py as py

try:
    from fraclab import _kernels as cy
except ImportError:
    cy = None


def cases(s=0.3):
    r = np.geomspace(1e-3, 50.0, 20000)
    kappa = np.sqrt(np.sort(np.random.default_rng(0).uniform(1.0, 4e4, 4000)))
    coef = 1.0 / kappa**2
    t = np.geomspace(1e-4, 1.0, 200)
    return {
        "bessel_k_scaled": lambda m: m.bessel_k_scaled(s, r),
        "rho": lambda m: m.rho(r, s),
        "drho": lambda m: m.drho(r, s),
        "mode_sum": lambda m: m.mode_sum(coef, kappa, t, s),
        "mode_sum_deriv": lambda m: m.mode_sum(coef, kappa, t, s, 1),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled module fraclab._kernels is not built; run `pip install -e . --no-build-isolation`")
        return 1
    print(f"{'kernel':<16} {'python [ms]':>12} {'cython [ms]':>12} {'speedup':>8} {'max rel diff':>13}")
    for name, fn in cases().items():
        a, b = fn(py), fn(cy)
        diff = float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-300)))
        tp = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        tc = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16} {tp:12.3f} {tc:12.3f} {tp / tc:8.1f} {diff:13.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
