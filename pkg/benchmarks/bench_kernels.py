"""Compare the compiled and pure-Python matrix-product kernels.

Times the two scans on their own, then one full evolution right-hand side
with each backend swapped in.  Usage::

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from evocontrol import _kernels_py, kernels, models
from evocontrol.evolution import EvolutionGains, epde_rhs
from evocontrol.grid import Grid, GridField

CASES = [
    # (label, intervals, substeps, n)
    ("example1 N=61", 60, 4, 2),
    ("example2 N=51", 50, 4, 3),
    ("example1 N=241", 240, 4, 2),
]


def best_of(fn, repeat):
    timer = timeit.Timer(fn)
    loops, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=loops)) / loops


def backends():
    out = {"python": _kernels_py}
    try:
        from evocontrol import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out


def bench_scans(repeat):
    rng = np.random.default_rng(0)
    impls = backends()
    print(f"{'case':<18}{'kernel':<20}" + "".join(f"{name:>12}" for name in impls) + f"{'speedup':>10}")
    for label, intervals, substeps, n in CASES:
        steps = np.eye(n) + 0.01 * rng.normal(size=(intervals * substeps, n, n))
        for kernel in ("chain_products", "pairwise_products"):
            times = {name: best_of(lambda m=mod: getattr(m, kernel)(steps, substeps), repeat)
                     for name, mod in impls.items()}
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            print(f"{label:<18}{kernel:<20}" + "".join(f"{t * 1e6:>10.1f}us" for t in times.values())
                  + f"{speed:>9.1f}x")


def bench_rhs(repeat):
    rng = np.random.default_rng(1)
    setups = [
        ("example1 N=61", models.example1(), Grid(61, 0.0, 3.0), EvolutionGains.build(2, 1, 2e-2, 0.1, 0.1)),
        ("example2 N=51", models.example2(), Grid(51, 0.0, 25.0), EvolutionGains.build(3, 1, 2e-6, 0.1, 0.1, 2e-4)),
    ]
    impls = backends()
    print()
    print(f"{'case':<18}{'full rhs':<20}" + "".join(f"{name:>12}" for name in impls))
    saved = (kernels.chain_products, kernels.pairwise_products)
    try:
        for label, problem, grid, gains in setups:
            field = GridField(grid, 0.3 * rng.normal(size=(grid.N, problem.n)),
                              0.3 * rng.normal(size=(grid.N, problem.m)))
            times = {}
            for name, mod in impls.items():
                kernels.chain_products, kernels.pairwise_products = mod.chain_products, mod.pairwise_products
                times[name] = best_of(lambda: epde_rhs(problem, field, gains), repeat)
            print(f"{label:<18}{'epde_rhs':<20}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times.values()))
    finally:
        kernels.chain_products, kernels.pairwise_products = saved


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    print(f"default backend: {kernels.BACKEND}")
    bench_scans(args.repeat)
    bench_rhs(args.repeat)


if __name__ == "__main__":
    main()
