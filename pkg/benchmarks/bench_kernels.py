"""Compare the numba and numpy backends of the wave time stepper.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends are timed on the same forward sweeps (1D and 2D grids) and the
results are checked for agreement.  The numba timing excludes compilation.
"""

import argparse
import time

import numpy as np

from bvwave._kernels import three_level_sweep
from bvwave.fem import assemble
from bvwave.types import Grid

CASES = [
    ("1d nx=257 nt=2049", Grid(1, -1.0, 1.0, 257, 2.0, 2049)),
    ("2d nx=33^2 nt=513", Grid(2, -2.0, 2.0, 33, 5.0, 513)),
    ("2d nx=65^2 nt=513", Grid(2, -1.0, 1.0, 65, 2.0, 513)),
]


def _run(ops, Y0, S, use_numba):
    Y = Y0.copy()
    three_level_sweep(Y, S, 1, Y.shape[0] - 1, ops.P, ops.E, ops.chol_E, use_numba=use_numba)
    return Y


def bench(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for name, grid in CASES:
        ops = assemble(grid)
        n = ops.n_interior
        Y0 = np.zeros((grid.nt, n))
        Y0[:2] = rng.standard_normal((2, n))
        S = 1e-3 * rng.standard_normal((grid.nt, n))
        _run(ops, Y0[:4], S[:4], True)  # compile
        times = {}
        out = {}
        for backend, flag in (("numba", True), ("numpy", False)):
            best = np.inf
            for _ in range(repeat):
                t0 = time.perf_counter()
                out[backend] = _run(ops, Y0, S, flag)
                best = min(best, time.perf_counter() - t0)
            times[backend] = best
        diff = np.max(np.abs(out["numba"] - out["numpy"])) / np.max(np.abs(out["numpy"]))
        rows.append((name, times["numba"], times["numpy"], times["numpy"] / times["numba"], diff))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    print(f"{'case':<22}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'rel diff':>12}")
    for name, tn, tp, speedup, diff in bench(args.repeat):
        print(f"{name:<22}{tn:>12.4f}{tp:>12.4f}{speedup:>10.2f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
