"""The numba kernels and their numpy fallbacks must agree to roundoff."""

import subprocess
import sys

import numpy as np
import pytest

from yokefit import _kernels
from yokefit.magnetostatics import build_nu_table, solve_nonlinear

numba_only = pytest.mark.skipif(not _kernels._HAVE_NUMBA,
                                reason="numba not installed")


@pytest.fixture(scope="module")
def spline_arrays(model):
    c = model.mean_curve
    return c.knots, c.values, c.tangents, c.extrapolation_slope


@numba_only
class TestHermitePaths:
    def test_eval_agreement(self, spline_arrays):
        knots, values, tangents, slope = spline_arrays
        s = np.random.default_rng(0).uniform(0.0, 1.5 * knots[-1], 4000)
        a = _kernels._hermite_eval_np(knots, values, tangents, slope, s)
        b = _kernels._hermite_eval_nb(knots, values, tangents, slope, s)
        assert np.allclose(a, b, rtol=1e-14, atol=0.0)

    def test_deriv_agreement(self, spline_arrays):
        knots, values, tangents, slope = spline_arrays
        s = np.random.default_rng(1).uniform(0.0, 1.5 * knots[-1], 4000)
        a = _kernels._hermite_deriv_np(knots, values, tangents, slope, s)
        b = _kernels._hermite_deriv_nb(knots, values, tangents, slope, s)
        assert np.allclose(a, b, rtol=1e-13, atol=1e-13 * np.max(np.abs(a)))

    def test_knot_values_exact_on_both_paths(self, spline_arrays):
        knots, values, tangents, slope = spline_arrays
        a = _kernels._hermite_eval_np(knots, values, tangents, slope, knots)
        b = _kernels._hermite_eval_nb(knots, values, tangents, slope, knots)
        assert np.array_equal(a, values)
        assert np.array_equal(b, values)


@numba_only
class TestAssemblyPaths:
    def test_assemble_field_agreement(self, system, mean_table):
        mesh = system.mesh
        rng = np.random.default_rng(2)
        a = np.zeros(mesh.n_nodes)
        a[system.free_nodes] = rng.normal(0.0, 2e-3, system.n_free)
        t = mean_table

        kd_np = np.zeros(system.nnz)
        ka_np = np.zeros(system.n_free)
        e_np = _kernels._assemble_field_np(
            a, mesh.tris, mesh.grads, mesh.areas, system.is_iron, t.ds, t.f,
            t.fp, t.w, 1.0 / (4e-7 * np.pi), system.node_free, system.eidx,
            kd_np, ka_np)
        kd_nb = np.zeros(system.nnz)
        ka_nb = np.zeros(system.n_free)
        e_nb = _kernels._assemble_field_nb(
            a, mesh.tris, mesh.grads, mesh.areas, system.is_iron, t.ds, t.f,
            t.fp, t.w, 1.0 / (4e-7 * np.pi), system.node_free, system.eidx,
            kd_nb, ka_nb)

        scale_k = np.max(np.abs(kd_np))
        scale_r = max(np.max(np.abs(ka_np)), 1e-30)
        assert np.max(np.abs(kd_np - kd_nb)) < 1e-12 * scale_k
        assert np.max(np.abs(ka_np - ka_nb)) < 1e-12 * scale_r
        assert e_np == pytest.approx(e_nb, rel=1e-12)

    def test_pcg_agreement(self, system, mean_table):
        kdata = np.zeros(system.nnz)
        ka = np.zeros(system.n_free)
        a = np.zeros(system.mesh.n_nodes)
        system.assemble(a, mean_table, kdata, ka)
        b = system.source_vector(100.0)
        invdiag = 1.0 / kdata[system.diag_idx]
        x_np = np.zeros_like(b)
        x_nb = np.zeros_like(b)
        _kernels._pcg_np(system.indptr, system.indices, kdata, invdiag, b,
                         x_np, 1e-12, 10 * system.n_free)
        _kernels._pcg_nb(system.indptr, system.indices, kdata, invdiag, b,
                         x_nb, 1e-12, 10 * system.n_free)
        assert np.max(np.abs(x_np - x_nb)) < 1e-10 * np.max(np.abs(x_np))


class TestEnvFlagDispatch:
    def test_env_flag_disables_jit_path(self):
        code = ("import yokefit; import sys; "
                "sys.exit(0 if not yokefit.numba_enabled() else 1)")
        proc = subprocess.run([sys.executable, "-c", code],
                              env={"PATH": "/usr/bin:/bin",
                                   "YOKEFIT_NUMBA": "0"},
                              capture_output=True)
        assert proc.returncode == 0, proc.stderr.decode()

    def test_fallback_path_solves_the_same_problem(self, system, model):
        # run one forward solve in a fallback-only subprocess and compare
        # the probe value against the in-process path
        import json
        import os
        import tempfile

        from yokefit.magnetostatics import probe_b

        table = build_nu_table(model.curve(np.zeros(model.M)))
        sol = solve_nonlinear(system, table, 185.0)
        here = probe_b(sol, [(0.5, 0.49)])[0, 1]

        script = r"""
import json, sys
import numpy as np
import yokefit as yf
from yokefit.magnetostatics import (DipoleGeometry, FemSystem, build_nu_table,
                                    generate_dipole_mesh, probe_b,
                                    solve_nonlinear)
assert not yf.numba_enabled()
tables = yf.synth_ensemble(seed=7, K=26, L=28, b_max=2.0)
curves = [yf.fit_monotone_spline(t) for t in tables]
stats = yf.estimate_statistics(curves, N=200)
pairs = yf.solve_eigenproblem(stats, M_max=4)
model = yf.build_model(stats, pairs, M=4, curves=curves)
geom = DipoleGeometry()
system = FemSystem(generate_dipole_mesh(geom, 1), turns=geom.turns)
sol = solve_nonlinear(system, build_nu_table(model.curve(np.zeros(4))), 185.0)
print(json.dumps(float(probe_b(sol, [(0.5, 0.49)])[0, 1])))
"""
        env = dict(os.environ)
        env["YOKEFIT_NUMBA"] = "0"
        with tempfile.NamedTemporaryFile("w", suffix=".py", delete=False) as f:
            f.write(script)
            name = f.name
        proc = subprocess.run([sys.executable, name], env=env,
                              capture_output=True, timeout=300)
        assert proc.returncode == 0, proc.stderr.decode()
        there = json.loads(proc.stdout.decode().strip().splitlines()[-1])
        assert abs(here - there) < 1e-9 * abs(here)
