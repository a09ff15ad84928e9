import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from yokefit.errors import DivergenceError, GeometryError, LocationError
from yokefit.inversion import training_currents
from yokefit.magnetostatics import (AIR, IRON, NU0, DipoleGeometry, FemSystem,
                                    LinearMaterial, build_nu_table, element_b,
                                    export_field_csv, gap_triangle_count,
                                    generate_dipole_mesh, load_mesh, probe_b,
                                    probe_field, save_mesh, solve_nonlinear)
from yokefit.magnetostatics.solver import FieldSolution


@pytest.fixture(scope="module")
def linear_table():
    # mu_r = 1000 iron, generous table range for Newton overshoot
    return build_nu_table(LinearMaterial(NU0 / 1000.0), s_max=6.0)


class TestGeometry:
    def test_degenerate_inputs_rejected(self):
        with pytest.raises(GeometryError):
            DipoleGeometry(pole_gap=0.0)
        with pytest.raises(GeometryError):
            DipoleGeometry(shim_drop=0.03, pole_gap=0.05)
        with pytest.raises(GeometryError):
            DipoleGeometry(shim_width=0.12, pole_width=0.2)
        with pytest.raises(GeometryError):
            DipoleGeometry(beam_height=0.35)
        with pytest.raises(GeometryError):
            DipoleGeometry(turns=0)

    def test_yoke_height_matches_named_parameter(self, geometry):
        got = (2 * geometry.beam_height + 2 * geometry.pole_body_height
               + geometry.pole_gap)
        assert got == pytest.approx(geometry.gap_height, rel=1e-12)

    def test_candidate_lattice_inside_gap(self, geometry, mesh):
        for pt in geometry.candidate_probe_lattice():
            assert mesh.region[mesh.locate(pt)] == AIR

    def test_distance_to_shim(self, geometry):
        x0, x1, y0, y1 = geometry.gap_rectangle()
        corner = (x0 + 1e-4, y0 + 1e-4)
        center = geometry.center
        assert geometry.distance_to_shim(corner) < 1e-3
        assert geometry.distance_to_shim(center) > 0.05


class TestMesh:
    def test_total_area_matches_domain(self, mesh, geometry):
        exact = geometry.domain_width * geometry.domain_height
        assert abs(mesh.areas.sum() - exact) / exact < 1e-10

    def test_refinement_doubles_gap_triangles(self, geometry, mesh):
        finer = generate_dipole_mesh(geometry, refinement=2)
        n1 = gap_triangle_count(mesh, geometry)
        n2 = gap_triangle_count(finer, geometry)
        assert n2 >= 2 * n1

    def test_dirichlet_flags_exactly_outer_rectangle(self, mesh, geometry):
        w, h = geometry.domain_width, geometry.domain_height
        on_rect = ((np.abs(mesh.nodes[:, 0]) < 1e-12)
                   | (np.abs(mesh.nodes[:, 0] - w) < 1e-12)
                   | (np.abs(mesh.nodes[:, 1]) < 1e-12)
                   | (np.abs(mesh.nodes[:, 1] - h) < 1e-12))
        assert np.array_equal(mesh.boundary, on_rect)

    def test_every_triangle_tagged_and_positive(self, mesh):
        assert np.all(mesh.areas > 0.0)
        assert set(np.unique(mesh.region)) <= {0, 1, 2, 3}
        assert np.any(mesh.region == IRON)

    def test_deterministic_generation(self, geometry):
        m1 = generate_dipole_mesh(geometry, refinement=1)
        m2 = generate_dipole_mesh(geometry, refinement=1)
        assert np.array_equal(m1.nodes, m2.nodes)
        assert np.array_equal(m1.tris, m2.tris)

    def test_invalid_refinement(self, geometry):
        with pytest.raises(GeometryError):
            generate_dipole_mesh(geometry, refinement=0)

    def test_text_round_trip(self, mesh, tmp_path):
        path = tmp_path / "mesh.txt"
        save_mesh(mesh, path)
        back = load_mesh(path)
        assert np.array_equal(back.nodes, mesh.nodes)
        assert np.array_equal(back.tris, mesh.tris)
        assert np.array_equal(back.region, mesh.region)
        assert np.array_equal(back.boundary, mesh.boundary)

    def test_field_csv_export(self, mesh, tmp_path):
        field = np.zeros((mesh.n_tris, 2))
        path = tmp_path / "field.csv"
        export_field_csv(mesh, field, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "x,y,Bx,By"
        assert len(lines) == mesh.n_tris + 1

    def test_locate_outside_raises(self, mesh):
        with pytest.raises(LocationError, match="outside"):
            mesh.locate((-1.0, -1.0))


class TestSolver:
    def test_zero_current_zero_field(self, system, linear_table):
        sol = solve_nonlinear(system, linear_table, 0.0)
        assert sol.converged
        assert np.all(sol.a == 0.0)
        assert np.all(sol.b_elem == 0.0)
        assert sol.history == [0.0]

    def test_linear_material_single_newton_step(self, system, linear_table):
        sol = solve_nonlinear(system, linear_table, 150.0)
        assert sol.newton_steps == 1
        assert sol.history[-1] < 1e-10

    def test_linear_material_equals_direct_solve(self, system, linear_table):
        sol = solve_nonlinear(system, linear_table, 150.0, linear_solver="cg")
        # reference: assemble the stiffness at the solution (state-independent
        # for a linear law) and solve once with a sparse direct factorization
        kdata = np.zeros(system.nnz)
        ka = np.zeros(system.n_free)
        system.assemble(sol.a, linear_table, kdata, ka)
        mat = sp.csr_matrix((kdata, system.indices, system.indptr),
                            shape=(system.n_free, system.n_free))
        ref = spla.spsolve(mat.tocsc(), system.source_vector(150.0))
        num = np.max(np.abs(sol.a[system.free_nodes] - ref))
        assert num / np.max(np.abs(ref)) < 1e-10

    def test_boundary_values_exactly_zero(self, system, mean_table):
        sol = solve_nonlinear(system, mean_table, 300.0)
        assert np.all(sol.a[system.mesh.boundary] == 0.0)

    def test_element_b_is_discrete_curl(self, system, mean_table):
        sol = solve_nonlinear(system, mean_table, 200.0)
        assert np.array_equal(sol.b_elem, element_b(system.mesh, sol.a))

    def test_tangent_matches_residual_finite_difference(self, system,
                                                        mean_table):
        mesh = system.mesh
        rng = np.random.default_rng(5)
        kdata = np.zeros(system.nnz)
        ka = np.zeros(system.n_free)
        kd2 = np.zeros(system.nnz)
        ka_p = np.zeros(system.n_free)
        ka_m = np.zeros(system.n_free)
        for trial in range(10):
            a = np.zeros(mesh.n_nodes)
            a[system.free_nodes] = rng.normal(0.0, 2e-3, system.n_free)
            d = np.zeros(mesh.n_nodes)
            d[system.free_nodes] = rng.normal(0.0, 1.0, system.n_free)
            system.assemble(a, mean_table, kdata, ka)
            mat = sp.csr_matrix((kdata, system.indices, system.indptr),
                                shape=(system.n_free, system.n_free))
            jd = mat @ d[system.free_nodes]
            eps = 1e-7
            system.assemble(a + eps * d, mean_table, kd2, ka_p)
            system.assemble(a - eps * d, mean_table, kd2, ka_m)
            fd = (ka_p - ka_m) / (2 * eps)
            rel = np.linalg.norm(fd - jd) / np.linalg.norm(jd)
            assert rel < 1e-5, f"trial {trial}: {rel}"

    def test_energy_decreases_across_accepted_steps(self, system, mean_table):
        sol = solve_nonlinear(system, mean_table, 450.0)
        eh = np.array(sol.energy_history)
        assert eh.size >= 3
        assert np.all(np.diff(eh) <= 1e-12 * (np.abs(eh[:-1]) + 1.0))
        assert eh[-1] < eh[0]

    def test_newton_history_superlinear_tail(self, system, mean_table):
        sol = solve_nonlinear(system, mean_table, 450.0, tol=1e-12)
        res = np.array(sol.history)
        tail = res[res < 1e-3]
        assert tail.size >= 3
        ratios = tail[1:] / tail[:-1]
        assert np.all(np.diff(ratios) < 0.0)

    def test_monotone_loading(self, system, mean_table, geometry):
        center = [geometry.center]
        by = []
        a_prev = None
        for cur in training_currents(20.0, 450.0, 8):
            sol = solve_nonlinear(system, mean_table, float(cur), a0=a_prev)
            a_prev = sol.a
            by.append(abs(probe_b(sol, center)[0, 1]))
        assert np.all(np.diff(by) > 0.0)

    def test_saturation_flattens_loading_curve(self, system, mean_table,
                                               geometry):
        center = [geometry.center]

        def secant(c0, c1):
            b0 = probe_b(solve_nonlinear(system, mean_table, c0), center)[0, 1]
            b1 = probe_b(solve_nonlinear(system, mean_table, c1), center)[0, 1]
            return (b1 - b0) / (c1 - c0)

        assert secant(430.0, 450.0) / secant(20.0, 40.0) < 0.9

    def test_refinement_stability_at_mid_current(self, geometry, system,
                                                 mean_table):
        mid = float(np.median(training_currents(20.0, 450.0, 8)))
        center = [geometry.center]
        b1 = probe_b(solve_nonlinear(system, mean_table, mid), center)[0, 1]
        finer = FemSystem(generate_dipole_mesh(geometry, refinement=2),
                          turns=geometry.turns)
        b2 = probe_b(solve_nonlinear(finer, mean_table, mid), center)[0, 1]
        assert abs(b2 - b1) / abs(b1) < 0.01

    def test_flux_consistency_with_potential_differences(self, system,
                                                         mean_table, geometry):
        # along any chain of mesh edges the summed per-element B flux equals
        # the potential difference of the endpoints: structural in 2D
        mesh = system.mesh
        sol = solve_nonlinear(system, mean_table, 185.0)
        cx = geometry.center[0]
        xs = np.unique(mesh.nodes[:, 0])
        x_line = xs[np.argmin(np.abs(xs - (cx - 0.08)))]
        on_line = np.flatnonzero(np.abs(mesh.nodes[:, 0] - x_line) < 1e-14)
        on_line = on_line[np.argsort(mesh.nodes[on_line, 1])]
        ys = mesh.nodes[on_line, 1]
        inside = (ys > 0.2) & (ys < 0.8)
        chain = on_line[inside]
        assert chain.size >= 4
        total_flux = 0.0
        for n1, n2 in zip(chain[:-1], chain[1:]):
            p1, p2 = mesh.nodes[n1], mesh.nodes[n2]
            midpoint = 0.5 * (p1 + p2) + np.array([1e-9, 0.0])
            e = mesh.locate(midpoint)
            t = p2 - p1
            normal = np.array([t[1], -t[0]])
            total_flux += float(sol.b_elem[e] @ normal)
        da = sol.a[chain[-1]] - sol.a[chain[0]]
        scale = max(abs(da), 1e-30)
        assert abs(total_flux - da) / scale < 1e-12

    def test_divergence_error_carries_history(self, system, mean_table):
        with pytest.raises(DivergenceError) as err:
            solve_nonlinear(system, mean_table, 450.0, max_iter=1)
        assert len(err.value.history) >= 1

    def test_nonpositive_slope_table_rejected(self):
        from yokefit.errors import NumericalError

        class Bad:
            b_max = 2.0

            def evaluate(self, s):
                return -np.asarray(s)

            def derivative(self, s):
                return np.full_like(np.asarray(s, dtype=float), -1.0)

        with pytest.raises(NumericalError, match="not positive"):
            build_nu_table(Bad())

    def test_assemble_and_solve_wrapper(self, mesh, geometry, system,
                                        mean_table):
        from yokefit.magnetostatics import assemble_and_solve
        via_wrapper = assemble_and_solve(mesh, LinearMaterial(NU0 / 500.0),
                                         120.0, turns=geometry.turns)
        direct = solve_nonlinear(
            system, build_nu_table(LinearMaterial(NU0 / 500.0), s_max=4.0),
            120.0)
        scale = np.max(np.abs(direct.a))
        assert np.max(np.abs(via_wrapper.a - direct.a)) < 1e-9 * scale


class TestProbe:
    def test_symmetric_points_agree(self, system, linear_table, geometry):
        sol = solve_nonlinear(system, linear_table, 100.0)
        cx, cy = geometry.center
        d = 0.0513
        left = probe_b(sol, [(cx - d, cy)])[0, 1]
        right = probe_b(sol, [(cx + d, cy)])[0, 1]
        assert abs(left - right) <= 1e-10 * max(abs(left), 1e-30)

    def test_centroid_without_patch_returns_element_value(self, system,
                                                          mean_table):
        mesh = system.mesh
        sol = solve_nonlinear(system, mean_table, 185.0)
        e = gap_element(mesh)
        centroid = mesh.nodes[mesh.tris[e]].mean(axis=0)
        got = probe_b(sol, [centroid], patch=False)[0]
        assert np.array_equal(got, sol.b_elem[e])

    def test_patch_average_is_area_weighted(self, system, mean_table):
        mesh = system.mesh
        sol = solve_nonlinear(system, mean_table, 185.0)
        e = gap_element(mesh)
        centroid = mesh.nodes[mesh.tris[e]].mean(axis=0)
        got = probe_field(mesh, sol.b_elem, [centroid], patch=True)[0]
        members = [e] + [int(t) for t in mesh.neighbors()[e]
                         if t >= 0 and mesh.region[t] == mesh.region[e]]
        w = mesh.areas[members]
        expect = w @ sol.b_elem[members] / w.sum()
        assert np.allclose(got, expect, rtol=1e-15)

    def test_probe_outside_mesh_echoes_point(self, system, mean_table):
        sol = solve_nonlinear(system, mean_table, 100.0)
        with pytest.raises(LocationError, match="-3.0"):
            probe_b(sol, [(-3.0, 0.5)])

    def test_probe_in_iron_rejected(self, system, mean_table, geometry):
        sol = solve_nonlinear(system, mean_table, 100.0)
        x0, x1, y0, y1 = geometry.gap_rectangle()
        iron_point = (0.5 * (x0 + x1), y1 + geometry.shim_drop
                      + 0.5 * geometry.pole_body_height)
        with pytest.raises(LocationError, match="iron"):
            probe_b(sol, [iron_point])


def gap_element(mesh):
    """Any air element strictly inside the gap band."""
    c = mesh.centroids()
    cand = np.flatnonzero((mesh.region == AIR)
                          & (np.abs(c[:, 0] - 0.5) < 0.05)
                          & (np.abs(c[:, 1] - 0.49) < 0.01))
    assert cand.size > 0
    return int(cand[0])
