"""Benchmark the numba batch kernels against the pure-numpy fallback.

Two parts:

1. Per-element kernel microbenchmarks (polar_init, u_step, p_step, grad
   scans) on identical random batches, best-of-5 wall times.
2. End-to-end solver iterations on a synthetic grid, one subprocess per
   backend (the backend is chosen at import time via FLIPFREE_KERNELS, so
   each side gets a fresh interpreter).

Run from the repository root:

    python benchmarks/bench_kernels.py
"""

import json
import os
import subprocess
import sys
import time

import numpy as np

REPEATS = 5
SIZES = (2_000, 20_000, 200_000)
SOLVE_GRID = 60  # vertices per side for the end-to-end comparison
SOLVE_ITERS = 40


def make_batch(rng, m, d):
    j = np.eye(d) + 0.2 * rng.normal(size=(m, d, d))
    lam = 0.05 * rng.normal(size=(m, d, d))
    w = 10.0 ** rng.uniform(-2.0, 0.0, size=m)
    mu = np.maximum(w, 10.0 ** rng.uniform(-1.0, 1.0, size=m))
    h = w * w / mu
    return j, lam, w, mu, h


def best_of(fn, *args):
    fn(*args)  # warmup (JIT compile / first-touch)
    best = float("inf")
    for _ in range(REPEATS):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def bench_kernels(backends):
    rng = np.random.default_rng(42)
    for m in SIZES:
        for d in (2, 3):
            j, lam, w, mu, h = make_batch(rng, m, d)
            u, p = backends[0][1].polar_init(j, 1e-9)
            cases = [
                ("polar_init", lambda mod: mod.polar_init(j, 1e-9)),
                ("u_step", lambda mod: mod.u_step(j, lam, p, u, mu, h)),
                ("p_step[sg]", lambda mod: mod.p_step(0, j, lam, u, w, mu)),
                ("p_step[sd]", lambda mod: mod.p_step(1, j, lam, u, w, mu)),
                ("grad_norms[sd]", lambda mod: mod.grad_norms(1, p)),
                ("energy[sg]", lambda mod: mod.energy_density(0, j)),
            ]
            print(f"\nm={m:,} d={d}")
            header = f"  {'kernel':<16}" + "".join(f"{name:>12}" for name, _ in backends)
            if len(backends) == 2:
                header += f"{'speedup':>10}"
            print(header)
            for label, call in cases:
                times = [best_of(call, mod) for _, mod in backends]
                row = f"  {label:<16}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
                if len(times) == 2:
                    row += f"{times[0] / times[1]:>9.1f}x"
                print(row)


def solve_workload():
    """Deterministic grid deformation used by the end-to-end comparison."""
    from flipfree.mesh_io import mesh_from_arrays
    from flipfree.solver import AdmmSolver, SolverConfig

    n = SOLVE_GRID
    xs, ys = np.meshgrid(np.linspace(0, 1, n), np.linspace(0, 1, n), indexing="ij")
    verts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    tris = []
    for i in range(n - 1):
        for k in range(n - 1):
            a, b = i * n + k, (i + 1) * n + k
            c, d = (i + 1) * n + k + 1, i * n + k + 1
            tris += [(a, b, c), (a, c, d)]
    mesh = mesh_from_arrays(verts, np.asarray(tris))
    rng = np.random.default_rng(7)
    w0 = verts + 0.02 * rng.normal(size=verts.shape)
    solver = AdmmSolver(mesh, SolverConfig())
    solver.initialize(w0)
    solver.iterate()  # warmup: JIT + factorization
    start = time.perf_counter()
    for _ in range(SOLVE_ITERS):
        solver.iterate()
    return (time.perf_counter() - start) / SOLVE_ITERS


def main():
    if os.environ.get("BENCH_SOLVE"):
        from flipfree.kernels import ACTIVE_BACKEND

        print(json.dumps({"backend": ACTIVE_BACKEND, "sec_per_iter": solve_workload()}))
        return

    from flipfree.kernels import NUMBA_AVAILABLE, batch_numpy

    backends = [("numpy", batch_numpy)]
    if NUMBA_AVAILABLE:
        from flipfree.kernels import batch_numba

        backends.append(("numba", batch_numba))
    else:
        print("numba not importable - benchmarking the numpy backend only")

    print("=" * 64)
    print("batch kernel microbenchmarks (best of %d)" % REPEATS)
    print("=" * 64)
    bench_kernels(backends)

    print()
    print("=" * 64)
    faces = 2 * (SOLVE_GRID - 1) ** 2
    print(f"solver iterations, {SOLVE_GRID}x{SOLVE_GRID} grid ({faces:,} elements)")
    print("=" * 64)
    results = {}
    for name, _ in backends:
        env = dict(os.environ, FLIPFREE_KERNELS=name, BENCH_SOLVE="1")
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__)],
            env=env,
            capture_output=True,
            text=True,
            check=True,
        )
        doc = json.loads(out.stdout.strip().splitlines()[-1])
        results[name] = doc["sec_per_iter"]
        print(f"  {name:<8} {doc['sec_per_iter'] * 1e3:8.2f} ms/iteration")
    if len(results) == 2:
        print(f"  speedup  {results['numpy'] / results['numba']:8.1f}x")


if __name__ == "__main__":
    main()
