"""Compare the numba and pure-numpy B-spline kernels.

Run with ``python3 benchmarks/bench_kernels.py``. Times the basis-and-derivative
kernel at several sizes, then one full profiled-objective evaluation with
each kernel swapped in. The first numba call (compilation) is excluded.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from pflsim import _kernels
from pflsim.estimator import OptimizerConfig, ProfileProblem
from pflsim.simgen import generate, to_regression_data
from pflsim.splines import SplineBasis


def best_of(fn, repeat: int = 5) -> float:
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def bench_basis(sizes, degree: int = 3, nder: int = 1) -> list[tuple]:
    rows = []
    basis = SplineBasis.equispaced(0.0, 1.0, 8, degree)
    rng = np.random.default_rng(0)
    for n in sizes:
        u = rng.uniform(0, 1, n)
        t_np = best_of(lambda: _kernels.basis_ders_numpy(basis.knots, degree, u, nder))
        t_nb = best_of(lambda: _kernels.basis_ders_numba(basis.knots, degree, u, nder)) if _kernels.HAVE_NUMBA else float("nan")
        rows.append((f"basis n={n}", t_np, t_nb))
    return rows


def bench_objective(n: int) -> tuple:
    data = to_regression_data(generate("m41", n, 1.5, seed=1))
    prob = ProfileProblem(data, OptimizerConfig(), 4)
    theta = prob.pack([0.3], np.ones(3) / np.sqrt(3))
    original = _kernels.basis_ders
    try:
        _kernels.basis_ders = _kernels.basis_ders_numpy
        t_np = best_of(lambda: prob.value_and_grad(theta))
        if _kernels.HAVE_NUMBA:
            _kernels.basis_ders = _kernels.basis_ders_numba
            t_nb = best_of(lambda: prob.value_and_grad(theta))
        else:
            t_nb = float("nan")
    finally:
        _kernels.basis_ders = original
    return (f"objective+grad n={n}", t_np, t_nb)


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[200, 2_000, 20_000, 200_000])
    args = parser.parse_args(argv)
    if _kernels.HAVE_NUMBA:
        _kernels.basis_ders_numba(np.r_[0, 0, 0, 0, 1, 1, 1, 1.0], 3, np.array([0.5]), 1)  # compile
    rows = bench_basis(args.sizes) + [bench_objective(200), bench_objective(2_000)]
    print(f"{'case':<24}{'numpy (ms)':>12}{'numba (ms)':>12}{'speed-up':>10}")
    for name, t_np, t_nb in rows:
        print(f"{name:<24}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.2f}")


if __name__ == "__main__":
    main()
