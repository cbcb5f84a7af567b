"""Compare the compiled and pure-Python kernels on representative workloads.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import os
import timeit

import numpy as np

from mfeqg import kernels
from mfeqg.config import load_config
from mfeqg.factors import simulate_independent, uniform_grid
from mfeqg.model import zeta
from mfeqg.riccati import solve_backward

CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs", "reference.yaml")


def workloads(backend: str):
    cfg = load_config(CONFIG)
    mod = kernels.get_backend(backend)
    f = cfg.factors
    grid = uniform_grid(1.0, 1000)
    bundle = simulate_independent(f, grid, 2000, 0)
    rng = np.random.default_rng(0)
    Y = rng.normal(size=(2000, 1001))
    z = zeta(cfg.model, grid)
    L = rng.normal(size=1001)
    rho = np.full(1001, 0.2)
    return {
        "rk4_backward (2x2, 1000 steps)": lambda: solve_backward(
            cfg.model, f, cfg.liability, 1000, backend=backend),
        "ou_euler (2000 paths, 1000 steps)": lambda: mod.ou_euler(
            bundle.xi[:, 0], bundle.dWi, f.K, f.m, f.Sigma, 1e-3),
        "habit_closed_loop (2000 x 1001)": lambda: mod.habit_closed_loop(
            Y, Y, np.zeros(2000), z, L, rho, 1.0, 1.0, 1.0, 0.5, 1e-3),
        "habit_open_loop (2000 x 1001)": lambda: mod.habit_open_loop(
            Y, np.zeros(2000), rho, 1.0, 0.5, 1e-3),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    backends = kernels.available_backends()
    results = {b: {} for b in backends}
    for b in backends:
        for name, fn in workloads(b).items():
            fn()
            results[b][name] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
    names = list(results["python"])
    print(f"{'kernel':36s}" + "".join(f"{b:>12s}" for b in backends)
          + ("     speedup" if len(backends) > 1 else ""))
    for name in names:
        row = f"{name:36s}" + "".join(f"{results[b][name] * 1e3:10.2f}ms" for b in backends)
        if len(backends) > 1:
            row += f"{results['python'][name] / results['cython'][name]:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
