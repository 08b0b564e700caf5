"""Path-tracking throughput: numba-compiled kernels vs the numpy fallback.

Run directly to benchmark both backends (the script re-executes itself in
subprocesses so each backend gets a clean import):

    python benchmarks/bench_tracking.py

or pin one backend:

    ALLFLOW_BACKEND=numpy python benchmarks/bench_tracking.py --single
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np


def build_system(n_vars: int, seed: int):
    from allflow.polysys import SystemBuilder

    rng = np.random.default_rng(seed)
    sb = SystemBuilder()
    names = [f"x{i}" for i in range(n_vars)]
    for nm in names:
        sb.add_variable(nm)
    for i in range(n_vars):
        terms = [(float(rng.normal()) + 1.0, {names[i]: 2}),
                 (float(rng.normal()), {})]
        for j in range(n_vars):
            terms.append((0.3 * float(rng.normal()), {names[j]: 1}))
        k, l = rng.choice(n_vars, size=2, replace=False)
        terms.append((0.2 * float(rng.normal()), {names[k]: 1, names[l]: 1}))
        sb.add_equation(terms)
    return sb.build()


def run_single(n_vars: int, seed: int) -> None:
    from allflow import homotopy, kernels

    system = build_system(n_vars, seed)
    total = system.total_degree()
    cfg = homotopy.TrackerConfig(rng_seed=seed)

    kernels.warm_up()
    t0 = time.perf_counter()
    solset = homotopy.solve_all(system, cfg)
    elapsed = time.perf_counter() - t0
    stats = solset.path_stats
    print(f"backend={kernels.BACKEND} vars={n_vars} paths={total} "
          f"time={elapsed:.3f}s rate={total / elapsed:.1f} paths/s "
          f"(converged={stats.converged} diverged={stats.diverged} "
          f"stalled={stats.stalled} solutions={len(solset.solutions)})")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--single", action="store_true",
                        help="benchmark only the backend selected by the "
                             "current environment")
    parser.add_argument("--vars", type=int, default=None,
                        help="system size (default: 8 for numba, 5 for numpy)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if args.single:
        n = args.vars or (8 if os.environ.get("ALLFLOW_BACKEND") != "numpy"
                          else 5)
        run_single(n, args.seed)
        return 0

    # The numpy fallback is orders of magnitude slower, so it gets a
    # smaller default system; rates are still directly comparable.
    for backend, default_vars in (("numba", 8), ("numpy", 5)):
        env = dict(os.environ, ALLFLOW_BACKEND=backend)
        cmd = [sys.executable, __file__, "--single",
               "--vars", str(args.vars or default_vars),
               "--seed", str(args.seed)]
        proc = subprocess.run(cmd, env=env)
        if proc.returncode != 0:
            return proc.returncode
    return 0


if __name__ == "__main__":
    sys.exit(main())
