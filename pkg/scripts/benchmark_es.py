"""Time DE and CMA-ES on the sphere and Rosenbrock benchmarks."""
import argparse
import time

import numpy as np

from scratchattack.es import Bounds, CMAConfig, DEConfig, cma_optimize, de_optimize


def sphere(x):
    return float(np.sum(x ** 2))


def rosenbrock(x):
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=42)
    s = ap.parse_args().seed
    runs = [
        ("DE sphere n=5", lambda: de_optimize(sphere, Bounds([-5] * 5, [5] * 5), DEConfig(50, 200, seed=s))),
        ("DE rosenbrock n=2", lambda: de_optimize(rosenbrock, Bounds([-2] * 2, [2] * 2),
                                                  DEConfig(50, 500, seed=s))),
        ("CMA sphere n=5", lambda: cma_optimize(sphere, CMAConfig(40, 100, np.zeros(5), 0.5, seed=s))),
        ("CMA rosenbrock n=5", lambda: cma_optimize(rosenbrock, CMAConfig(40, 2000, np.zeros(5), 0.5, seed=s))),
    ]
    for name, run in runs:
        t0 = time.perf_counter()
        out = run()
        print(f"{name:20s} best {out.best_fitness:.3e}  evals {out.evaluations:6d}  "
              f"{time.perf_counter() - t0:.2f}s")


if __name__ == "__main__":
    main()
