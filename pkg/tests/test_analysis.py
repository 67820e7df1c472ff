"""Solver, error norms, convergence rates, and condition estimation."""

import numpy as np
import numpy.testing as npt
import pytest
import scipy.sparse as sp

from surfcut.analysis import (
    ConvergenceTable,
    condition_number,
    condition_number_dense,
    eoc,
    error_norms,
    solve,
)
from surfcut.assembly import AssemblyParams, LinearSystem, DofMap, assemble, build_dof_map
from surfcut.errors import EstimatorError, SolverError
from surfcut.geometry import ProblemData
from surfcut.mesh import LevelSetField, build_background, extract_cut_surface
from surfcut.quadrature import conical_rule


def toy_system(A, b):
    n = A.shape[0]
    return LinearSystem(
        A=sp.csr_matrix(A),
        b=np.asarray(b, dtype=float),
        dof_map=DofMap(vertex_ids=np.arange(n)),
        h=1.0,
        params=AssemblyParams(),
    )


def nodal_extension(cut, problem):
    dof_map = build_dof_map(cut)
    return problem.exact_solution_ext(cut.mesh.vertices[dof_map.vertex_ids])


class TestSolve:
    def test_identity_system(self):
        rng = np.random.default_rng(50)
        b = rng.normal(size=7)
        system = toy_system(np.eye(7), b)
        npt.assert_allclose(solve(system), b, atol=1e-14)

    def test_patch_system_constant_solution(self, torus, benchmark, torus_cuts):
        c = 0.9
        cut = torus_cuts(0.4)
        hook = ProblemData(
            surface=torus,
            alpha=benchmark.alpha,
            beta_field=benchmark.beta_field,
            u_ambient=lambda p: np.full(np.asarray(p).shape[:-1], c),
            grad_u_ambient=lambda p: np.zeros(np.asarray(p).shape),
        )
        system = assemble(cut, hook, AssemblyParams())
        u = solve(system)
        residual = np.linalg.norm(system.A @ u - system.b)
        assert residual <= 1e-12 * np.linalg.norm(system.b)
        npt.assert_allclose(u, c, atol=1e-12)

    def test_degenerate_cut_without_stabilization_fails(self, torus, benchmark):
        # a sliver cut 1e-13 into the tet starves the far rows when the
        # stabilization is off; the failure must surface, never fall back
        mesh = build_background((0, 0, 0), (1, 1, 1), (1, 1, 1))
        shifted = mesh.vertices * 0.2 + np.array([1.1, 0.0, 0.0])
        mesh.vertices = shifted
        values = np.ones(mesh.n_vertices)
        values[0] = -1e-13
        cut = extract_cut_surface(mesh, LevelSetField(values))
        system = assemble(cut, benchmark, AssemblyParams(c_F=0.0))
        with pytest.raises(SolverError):
            solve(system)

    def test_exactly_singular_matrix_surfaces(self):
        system = toy_system(np.array([[1.0, 1.0], [1.0, 1.0]]), [1.0, 2.0])
        with pytest.raises(SolverError):
            solve(system)

    def test_residual_contract_enforced(self):
        # numerically rank-deficient matrix: LU succeeds but the residual
        # cannot meet the tolerance
        rng = np.random.default_rng(60)
        n = 40
        u_fac, _ = np.linalg.qr(rng.normal(size=(n, n)))
        v_fac, _ = np.linalg.qr(rng.normal(size=(n, n)))
        dense = u_fac @ np.diag(np.logspace(0, -25, n)) @ v_fac.T
        system = toy_system(dense, rng.normal(size=n))
        with pytest.raises(SolverError):
            solve(system, rel_tol=1e-10)


class TestErrorNorms:
    def test_zero_solution_gives_exact_l2_mass(self, benchmark, torus_cuts):
        cut = torus_cuts(0.2)
        n = build_dof_map(cut).n_dofs
        report = error_norms(np.zeros(n), cut, benchmark)
        # independent high-order quadrature of (u^e)^2 over the facets
        oracle_rule = conical_rule(6)
        pts = oracle_rule.physical_points(cut.facet_vertices)
        vals = benchmark.exact_solution_ext(pts.reshape(-1, 3)).reshape(pts.shape[:2])
        oracle = np.sqrt(
            np.einsum("q,kq,k->", oracle_rule.weights, vals**2, cut.facet_areas)
        )
        assert report.l2_error == pytest.approx(oracle, rel=1e-3)

    def test_interpolated_exact_solution_second_order(self, benchmark, torus_cuts):
        errors = []
        for h in (0.2, 0.1):
            cut = torus_cuts(h)
            report = error_norms(nodal_extension(cut, benchmark), cut, benchmark)
            errors.append(report.l2_error)
        rate = np.log2(errors[0] / errors[1])
        assert 1.6 <= rate <= 2.4

    def test_linear_field_errors_track_geometry(self, torus, benchmark, torus_cuts):
        # the extension of any nonconstant field is curved (composition
        # with the closest-point map), so even an ambient linear leaves an
        # O(h^2) interpolation error in values and an O(h) mismatch in the
        # pulled-back gradient from the normal component of c
        c = np.array([0.4, -0.3, 0.8])
        d = 0.2
        hook = ProblemData(
            surface=torus,
            alpha=benchmark.alpha,
            beta_field=benchmark.beta_field,
            u_ambient=lambda p: np.asarray(p) @ c + d,
            grad_u_ambient=lambda p: np.broadcast_to(c, np.asarray(p).shape).copy(),
        )
        l2s, grads = [], []
        for h in (0.2, 0.1):
            cut = torus_cuts(h)
            u = nodal_extension(cut, hook)
            report = error_norms(u, cut, hook, AssemblyParams())
            l2s.append(report.l2_error)
            grads.append(report.grad_error)
        assert 1.6 <= np.log2(l2s[0] / l2s[1]) <= 2.4
        assert 0.6 <= np.log2(grads[0] / grads[1]) <= 1.6

    def test_constant_field_reproduced_exactly(self, torus, benchmark, torus_cuts):
        cut = torus_cuts(0.2)
        hook = ProblemData(
            surface=torus,
            alpha=benchmark.alpha,
            beta_field=benchmark.beta_field,
            u_ambient=lambda p: np.full(np.asarray(p).shape[:-1], 0.6),
            grad_u_ambient=lambda p: np.zeros(np.asarray(p).shape),
        )
        dof_map = build_dof_map(cut)
        u = np.full(dof_map.n_dofs, 0.6)
        report = error_norms(u, cut, hook, AssemblyParams())
        assert report.l2_error <= 1e-12
        assert report.grad_error <= 1e-10
        assert report.energy_error <= 1e-12

    def test_energy_norm_composition(self, benchmark, torus_cuts):
        cut = torus_cuts(0.2)
        n = build_dof_map(cut).n_dofs
        rng = np.random.default_rng(51)
        u = rng.normal(size=n)
        report = error_norms(u, cut, benchmark)
        composed = np.sqrt(
            report.l2_error**2
            + cut.mesh.h * report.streamline_sq
            + cut.mesh.h * report.jump_sq
        )
        assert report.energy_error == pytest.approx(composed, rel=1e-14)
        assert report.energy_error >= report.l2_error

    def test_zero_velocity_energy_reduces_to_l2(self, torus, benchmark, torus_cuts):
        cut = torus_cuts(0.2)
        hook = ProblemData(
            surface=torus,
            alpha=benchmark.alpha,
            beta_field=lambda p: np.zeros(np.asarray(p).shape),
            u_ambient=benchmark.u_ambient,
            grad_u_ambient=benchmark.grad_u_ambient,
        )
        n = build_dof_map(cut).n_dofs
        rng = np.random.default_rng(52)
        u = rng.normal(size=n)
        report = error_norms(u, cut, hook)
        assert report.streamline_sq == 0.0
        without_jump = np.sqrt(report.energy_error**2 - cut.mesh.h * report.jump_sq)
        assert without_jump == pytest.approx(report.l2_error, rel=1e-14)

    def test_degree_four_close_to_degree_nine(self, benchmark, torus_cuts):
        cut = torus_cuts(0.2)
        u = nodal_extension(cut, benchmark)
        r4 = error_norms(u, cut, benchmark, degree=4)
        r9 = error_norms(u, cut, benchmark, degree=9)
        assert r4.l2_error == pytest.approx(r9.l2_error, rel=1e-3)
        assert r4.grad_error == pytest.approx(r9.grad_error, rel=1e-3)
        assert r4.energy_error == pytest.approx(r9.energy_error, rel=1e-3)

    def test_wrong_vector_length_rejected(self, benchmark, torus_cuts):
        cut = torus_cuts(0.4)
        with pytest.raises(ValueError):
            error_norms(np.zeros(3), cut, benchmark)


class TestEoc:
    def test_exact_second_order(self):
        rates = eoc([4e-2, 1e-2], [0.2, 0.1])
        assert rates[0] is None
        assert rates[1] == pytest.approx(2.0, abs=1e-12)

    def test_equal_errors_rate_zero(self):
        assert eoc([1e-2, 1e-2], [0.2, 0.1])[1] == pytest.approx(0.0, abs=1e-12)

    def test_three_halves(self):
        # halving with error ratio 2*sqrt(2) gives exactly 3/2
        assert eoc([1e-2, 1e-2 / (2.0 * np.sqrt(2.0))], [0.2, 0.1])[1] == pytest.approx(
            1.5, abs=1e-12
        )

    def test_zero_error_rate_absent(self):
        assert eoc([1e-2, 0.0], [0.2, 0.1])[1] is None

    def test_nonmonotone_h_rejected(self):
        with pytest.raises(ValueError):
            eoc([1.0, 2.0], [0.1, 0.2])

    def test_table_from_reports(self, benchmark, torus_cuts):
        reports = []
        hs = [0.4, 0.2]
        ns = []
        for h in hs:
            cut = torus_cuts(h)
            n = build_dof_map(cut).n_dofs
            ns.append(n)
            reports.append(error_norms(np.zeros(n), cut, benchmark))
        table = ConvergenceTable.from_reports(hs, ns, reports)
        assert len(table.rows) == 2
        assert table.rows[0].eoc_l2 is None
        assert table.rows[1].eoc_l2 is not None


class TestConditionNumber:
    def test_identity(self):
        report = condition_number(sp.identity(20, format="csr"))
        assert report.kappa == pytest.approx(1.0, rel=1e-8)

    def test_diagonal(self):
        report = condition_number(sp.csr_matrix(np.diag([1.0, 4.0])))
        assert report.sigma_max == pytest.approx(4.0, rel=1e-8)
        assert report.sigma_min == pytest.approx(1.0, rel=1e-8)
        assert report.kappa == pytest.approx(4.0, rel=1e-7)

    def test_permutation_is_orthogonal(self):
        report = condition_number(sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]])))
        assert report.kappa == pytest.approx(1.0, rel=1e-8)

    def test_kappa_at_least_one(self):
        rng = np.random.default_rng(53)
        A = sp.csr_matrix(rng.normal(size=(30, 30)))
        report = condition_number(A)
        assert report.kappa >= 1.0

    def test_matches_dense_svd(self):
        rng = np.random.default_rng(54)
        dense = rng.normal(size=(60, 60)) + 5.0 * np.eye(60)
        A = sp.csr_matrix(dense)
        report = condition_number(A)
        oracle = condition_number_dense(A)
        assert report.kappa == pytest.approx(oracle, rel=0.01)

    def test_nonconvergence_surfaces(self):
        rng = np.random.default_rng(55)
        A = sp.csr_matrix(rng.normal(size=(40, 40)) + 3.0 * np.eye(40))
        with pytest.raises(EstimatorError) as info:
            condition_number(A, max_iterations=1)
        assert info.value.iterations == 1
