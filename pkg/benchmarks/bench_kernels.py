#!/usr/bin/env python3
"""Benchmark the numba kernels against their numpy fallbacks.

Times the three hot paths (Hermite spline evaluation, nonlinear FEM assembly,
Jacobi-PCG) and one full Newton solve, then cross-checks that both paths agree
numerically.  The package-level dispatch is selected once per process via the
YOKEFIT_NUMBA environment variable; here both variants are called directly so
a single run compares them side by side.

Usage:
    python benchmarks/bench_kernels.py [--refinement R] [--iters N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

import yokefit as yf
from yokefit import _kernels
from yokefit.magnetostatics import (DipoleGeometry, FemSystem, build_nu_table,
                                    generate_dipole_mesh, solve_nonlinear)


def timeit(fn, iters):
    best = np.inf
    for _ in range(iters):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--refinement", type=int, default=1,
                        help="mesh refinement level (default 1)")
    parser.add_argument("--iters", type=int, default=7,
                        help="timing repetitions, best-of (default 7)")
    args = parser.parse_args()

    if not _kernels._HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    print("building model and system ...")
    tables = yf.synth_ensemble(seed=7, K=26, L=28, b_max=2.0)
    curves = [yf.fit_monotone_spline(t) for t in tables]
    stats = yf.estimate_statistics(curves, N=200)
    pairs = yf.solve_eigenproblem(stats, M_max=4)
    model = yf.build_model(stats, pairs, M=4, curves=curves)
    geom = DipoleGeometry()
    mesh = generate_dipole_mesh(geom, refinement=args.refinement)
    system = FemSystem(mesh, turns=geom.turns)
    table = build_nu_table(model.curve(np.zeros(model.M)))
    print(f"mesh: {mesh.n_nodes} nodes, {mesh.n_tris} triangles, "
          f"{system.n_free} unknowns\n")

    rows = []

    # --- Hermite evaluation -------------------------------------------------
    c = model.mean_curve
    s = np.random.default_rng(0).uniform(0.0, 1.4 * c.b_max, 200_000)
    args_h = (c.knots, c.values, c.tangents, c.extrapolation_slope, s)
    _kernels._hermite_eval_nb(*args_h)          # JIT warmup
    t_np = timeit(lambda: _kernels._hermite_eval_np(*args_h), args.iters)
    t_nb = timeit(lambda: _kernels._hermite_eval_nb(*args_h), args.iters)
    diff = np.max(np.abs(_kernels._hermite_eval_np(*args_h)
                         - _kernels._hermite_eval_nb(*args_h)))
    rows.append(("hermite_eval (200k pts)", t_np, t_nb, diff))

    # --- assembly -----------------------------------------------------------
    rng = np.random.default_rng(1)
    a = np.zeros(mesh.n_nodes)
    a[system.free_nodes] = rng.normal(0.0, 2e-3, system.n_free)
    nu0 = 1.0 / (4e-7 * np.pi)
    kd1, ka1 = np.zeros(system.nnz), np.zeros(system.n_free)
    kd2, ka2 = np.zeros(system.nnz), np.zeros(system.n_free)
    args_np = (a, mesh.tris, mesh.grads, mesh.areas, system.is_iron, table.ds,
               table.f, table.fp, table.w, nu0, system.node_free, system.eidx)
    _kernels._assemble_field_nb(*args_np, kd2, ka2)   # warmup
    t_np = timeit(lambda: _kernels._assemble_field_np(*args_np, kd1, ka1),
                  args.iters)
    t_nb = timeit(lambda: _kernels._assemble_field_nb(*args_np, kd2, ka2),
                  args.iters)
    diff = max(np.max(np.abs(kd1 - kd2)) / np.max(np.abs(kd1)),
               np.max(np.abs(ka1 - ka2)) / max(np.max(np.abs(ka1)), 1e-30))
    rows.append((f"assemble ({mesh.n_tris} tris)", t_np, t_nb, diff))

    # --- PCG ----------------------------------------------------------------
    b = system.source_vector(185.0)
    invdiag = 1.0 / kd1[system.diag_idx]
    x1, x2 = np.zeros_like(b), np.zeros_like(b)
    _kernels._pcg_nb(system.indptr, system.indices, kd2, invdiag, b,
                     x2.copy(), 1e-12, 10 * system.n_free)     # warmup
    t_np = timeit(lambda: _kernels._pcg_np(system.indptr, system.indices, kd1,
                                           invdiag, b, x1 * 0.0, 1e-12,
                                           10 * system.n_free), args.iters)
    t_nb = timeit(lambda: _kernels._pcg_nb(system.indptr, system.indices, kd2,
                                           invdiag, b, x2 * 0.0, 1e-12,
                                           10 * system.n_free), args.iters)
    _kernels._pcg_np(system.indptr, system.indices, kd1, invdiag, b, x1,
                     1e-12, 10 * system.n_free)
    _kernels._pcg_nb(system.indptr, system.indices, kd2, invdiag, b, x2,
                     1e-12, 10 * system.n_free)
    diff = np.max(np.abs(x1 - x2)) / np.max(np.abs(x1))
    rows.append((f"pcg ({system.n_free} unknowns)", t_np, t_nb, diff))

    # --- full Newton solve (dispatched path only) ----------------------------
    t_solve = timeit(lambda: solve_nonlinear(system, table, 185.0), 3)
    active = "numba" if yf.numba_enabled() else "numpy"

    print(f"{'kernel':<28s} {'numpy':>10s} {'numba':>10s} "
          f"{'speedup':>8s} {'max diff':>10s}")
    print("-" * 70)
    for label, t_np, t_nb, diff in rows:
        print(f"{label:<28s} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
              f"{t_np / t_nb:>7.1f}x {diff:>10.2e}")
    print("-" * 70)
    print(f"full Newton solve at 185 A ({active} path): {t_solve * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
