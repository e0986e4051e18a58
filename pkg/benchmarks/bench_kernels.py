"""Compare the compiled and numpy B-spline basis kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]

Times ``basis_with_derivative`` on batches shaped like the model's hot
paths (a T-KAN gate over a 64-sample batch, a KAN head) and checks that both
backends return the same numbers.
"""
import argparse
import timeit

import numpy as np

from tkan import kernels
from tkan.splines import make_uniform_grid

CASES = {
    "gated cell step (64 x 208)": (64, 208),
    "kan head input (512 x 64)": (512, 64),
    "large batch (4096 x 144)": (4096, 144),
}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()
    grid = make_uniform_grid()
    rng = np.random.default_rng(0)
    backends = {"numpy": kernels.python_basis_with_derivative}
    if kernels.compiled_basis_with_derivative is not None:
        backends["cython"] = kernels.compiled_basis_with_derivative
    else:
        print("compiled extension not built; timing the numpy backend only")
    print(f"import-time backend: {kernels.BACKEND}")
    print(f"{'case':<30} " + " ".join(f"{name:>12}" for name in backends) + "   speedup")
    for label, shape in CASES.items():
        x = rng.normal(scale=1.5, size=shape)
        results, times = {}, {}
        for name, fn in backends.items():
            results[name] = fn(x, grid.knots, grid.order, grid.interior_intervals)
            times[name] = min(timeit.repeat(lambda: fn(x, grid.knots, grid.order, grid.interior_intervals),
                                            number=1, repeat=args.repeats))
        if len(results) == 2:
            for a, b in zip(results["numpy"], results["cython"]):
                assert np.array_equal(a, b) or np.abs(a - b).max() < 1e-13
            speed = f"{times['numpy'] / times['cython']:8.1f}x"
        else:
            speed = ""
        print(f"{label:<30} " + " ".join(f"{1e3 * t:10.3f}ms" for t in times.values()) + f"   {speed}")


if __name__ == "__main__":
    main()
