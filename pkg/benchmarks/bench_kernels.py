"""Compare the compiled and numpy flow kernels.

Usage: python3 benchmarks/bench_kernels.py [--points N,N,...] [--repeat R]

Times ``evaluate`` and ``integrate`` (Dormand-Prince, rtol = atol = 1e-10)
on polynomial and trigonometric fields in R^3 for several batch sizes,
checks that the two backends agree, and prints one line per case with the
speedup. The compiled kernel works point by point while the fallback is
vectorized over the batch, so the gap closes as batches grow.
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from hortrace import kernels
from hortrace.fieldspec import parse_field

CASES = {
    "heisenberg": ["1", "0", "-x2/2"],
    "rotation": ["-x2", "x1", "0.1*x3"],
    "trig": ["sin(x2)", "x1^2 - 1", "exp(-x3)*cos(x1)"],
}


def _time(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", default="20,200,2000,20000", help="comma-separated batch sizes")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    compiled = kernels.compiled_backend()
    if compiled is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    py = kernels.python_backend
    lo, hi = np.full(3, -5.0), np.full(3, 5.0)
    print(f"{'points':>7} {'case':<12} {'kernel':<10} {'python s':>10} {'compiled s':>11} "
          f"{'speedup':>8} {'max diff':>9}")
    for n in (int(v) for v in args.points.split(",")):
        X = np.random.default_rng(0).uniform(-0.5, 0.5, (n, 3))
        for name, coeffs in CASES.items():
            prog = parse_field(coeffs).program
            ev = [lambda b=b: b.evaluate(prog, X) for b in (py, compiled)]
            it = [lambda b=b: b.integrate(prog, X, 0.5, 1e-10, 1e-10, np.inf, lo, hi) for b in (py, compiled)]
            for label, (f_py, f_c) in (("evaluate", ev), ("integrate", it)):
                a, b = f_py(), f_c()
                a, b = (a[0], b[0]) if isinstance(a, tuple) else (a, b)
                diff = float(np.max(np.abs(a - b)))
                t_py, t_c = _time(f_py, args.repeat), _time(f_c, args.repeat)
                print(f"{n:>7} {name:<12} {label:<10} {t_py:>10.4f} {t_c:>11.4f} "
                      f"{t_py / t_c:>7.1f}x {diff:>9.1e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
