"""Time heat-bath sweeps on the compiled and pure-Python backends.

    python3 benchmarks/bench_sweep.py [--size 64] [--sweeps 50] [--beta 0.44]

Both backends consume the same uniforms, so the final spins must agree
exactly; the script checks that before reporting timings.
"""
import argparse
import time

import numpy as np

from gibbslab import _sweep_py
from gibbslab.dynamics import IsingGraph, make_rng
from gibbslab.interactions import ising
from gibbslab.lattice import BoundaryCondition, make_grid

try:
    from gibbslab import _sweep
except ImportError:
    _sweep = None


def bench(module, graph, beta, uniforms, repeats):
    best = float("inf")
    for _ in range(repeats):
        spins = np.ones(len(graph.field), dtype=np.int8)
        n = uniforms.shape[0]
        args = (spins, graph.indptr, graph.nbr, graph.weight, graph.field, graph.update, beta,
                uniforms, 0, 0, np.zeros(0, np.int64), np.zeros((n, 0), np.int8),
                np.zeros(n), np.zeros(n), 0.0, 0.0)
        t = time.perf_counter()
        module.run_sweeps(*args)
        best = min(best, time.perf_counter() - t)
    return best, spins


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--sweeps", type=int, default=50)
    ap.add_argument("--beta", type=float, default=0.44)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    graph = IsingGraph.build(ising(1.0, 0.0, 2), make_grid((args.size, args.size)), BoundaryCondition.plus())
    uniforms = make_rng(1).random((args.sweeps, len(graph.update)))
    updates = args.sweeps * len(graph.update)
    t_py, s_py = bench(_sweep_py, graph, args.beta, uniforms, 1)
    print(f"python : {t_py:8.3f} s  {1e9 * t_py / updates:8.1f} ns/update")
    if _sweep is None:
        print("cython : extension not built")
        return
    t_cy, s_cy = bench(_sweep, graph, args.beta, uniforms, args.repeats)
    print(f"cython : {t_cy:8.3f} s  {1e9 * t_cy / updates:8.1f} ns/update")
    print(f"speedup: {t_py / t_cy:8.1f}x   identical final state: {np.array_equal(s_py, s_cy)}")


if __name__ == "__main__":
    main()
