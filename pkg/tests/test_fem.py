import dataclasses

import numpy as np
import pytest

from seirhcd.fem import (
    ElementMatrices,
    TridiagonalSystem,
    assemble_step,
    solve_fem,
    stiffness_bands,
    tridiagonal_solve,
)
from seirhcd.fdm import solve_fdm
from seirhcd.model import GridSpec, StateField, StatePoint, solve_ode

from conftest import POPULATION


class TestElementMatrices:
    def test_stiffness_rows_sum_to_zero(self):
        elem = ElementMatrices.for_width(0.25)
        np.testing.assert_allclose(elem.stiffness.sum(axis=1), 0.0, atol=0)

    def test_mass_entries_sum_to_width(self):
        elem = ElementMatrices.for_width(0.25)
        assert elem.mass.sum() == pytest.approx(0.25, rel=1e-15)

    def test_block_values(self):
        elem = ElementMatrices.for_width(0.5)
        np.testing.assert_allclose(elem.stiffness, [[2.0, -2.0], [-2.0, 2.0]])
        np.testing.assert_allclose(elem.mass, [[1 / 6, 1 / 12], [1 / 12, 1 / 6]])


class TestTridiagonalSolve:
    def test_identity_returns_rhs(self):
        rhs = np.array([1.0, -2.0, 3.0, 0.5])
        sys = TridiagonalSystem(
            sub=np.zeros(4), diag=np.ones(4), super=np.zeros(4), rhs=rhs
        )
        np.testing.assert_array_equal(tridiagonal_solve(sys), rhs)

    def test_matches_dense_gaussian_elimination(self):
        rng = np.random.default_rng(11)
        n = 60
        sub = rng.uniform(-1, 1, n)
        sup = rng.uniform(-1, 1, n)
        diag = 4.0 + rng.uniform(0, 1, n)  # diagonally dominant
        rhs = rng.uniform(-5, 5, n)
        sub[0] = sup[-1] = 0.0
        sys = TridiagonalSystem(sub=sub, diag=diag, super=sup, rhs=rhs)
        dense = sys.to_dense()
        np.testing.assert_allclose(
            tridiagonal_solve(sys), np.linalg.solve(dense, rhs), rtol=0, atol=1e-13
        )

    def test_row_scaling_invariance(self):
        rng = np.random.default_rng(5)
        n = 20
        sub = rng.uniform(-1, 1, n)
        sup = rng.uniform(-1, 1, n)
        diag = 5.0 + rng.uniform(0, 1, n)
        rhs = rng.uniform(-1, 1, n)
        sub[0] = sup[-1] = 0.0
        scale = rng.uniform(0.5, 2.0, n)
        plain = tridiagonal_solve(TridiagonalSystem(sub, diag, sup, rhs))
        scaled = tridiagonal_solve(
            TridiagonalSystem(sub * scale, diag * scale, sup * scale, rhs * scale)
        )
        np.testing.assert_allclose(scaled, plain, rtol=1e-12)

    def test_zero_pivot_reports_row(self):
        sys = TridiagonalSystem(
            sub=np.zeros(3), diag=np.array([1.0, 0.0, 1.0]), super=np.zeros(3),
            rhs=np.ones(3),
        )
        with pytest.raises(np.linalg.LinAlgError, match="row 1"):
            tridiagonal_solve(sys)


class TestAssembleStep:
    def test_pure_mass_identity(self, base_params):
        # No diffusion, no reaction inflow/outflow on s: u_new == u_prev
        # (initial data compatible with the Dirichlet end).
        p = dataclasses.replace(
            base_params, v_s=0.0, alpha_i=0.0, alpha_e=0.0
        )
        grid = GridSpec(nx=16, nt=10, t_end=1.0)
        x = grid.x()
        values = np.zeros((7, x.size))
        values[0] = 0.9 * (1.0 - x**2)
        u = StateField(x, values)
        sys = assemble_step(u, p, grid, 0.0, "s")
        solution = tridiagonal_solve(sys)
        np.testing.assert_allclose(solution, u.values[0], rtol=1e-13, atol=1e-16)

    def test_interior_stiffness_values(self):
        # Uniform n = 1, h = 0.25, v = 1: diag 2/h = 8, off-diagonal -4.
        n_nodal = np.ones(5)
        sub, diag, sup = stiffness_bands(n_nodal, v=1.0, h=0.25)
        np.testing.assert_allclose(diag[1:-1], 8.0)
        np.testing.assert_allclose(sub[1:], -4.0)
        np.testing.assert_allclose(sup[:-1], -4.0)
        # Global stiffness annihilates constants: row sums vanish.
        rows = sub + diag + sup
        np.testing.assert_allclose(rows, 0.0, atol=1e-15)

    def test_dirichlet_row(self, base_params, cap_field):
        grid = GridSpec(nx=16, nt=10, t_end=1.0)
        sys = assemble_step(cap_field(grid), base_params, grid, 0.0, "s")
        assert sys.diag[-1] == 1.0
        assert sys.sub[-1] == 0.0
        assert sys.rhs[-1] == 0.0

    def test_unknown_compartment_rejected(self, base_params, cap_field):
        grid = GridSpec(nx=16, nt=10, t_end=1.0)
        with pytest.raises(ValueError, match="no diffusion equation"):
            assemble_step(cap_field(grid), base_params, grid, 0.0, "h")


class TestSolveFem:
    def test_zero_initial_field_gives_zero(self, base_params):
        grid = GridSpec(nx=16, nt=50, t_end=5.0)
        run = solve_fem(base_params, StateField.zeros(grid), grid)
        assert np.all(run.snapshots == 0.0)

    def test_zero_velocity_uniform_matches_ode_oracle(
        self, base_params, uniform_point, count_point
    ):
        p = dataclasses.replace(base_params, v_s=0.0, v_e=0.0, v_i=0.0, v_r=0.0)
        t_end = 20.0
        errors = []
        for nt in (400, 800):
            grid = GridSpec(nx=16, nt=nt, t_end=t_end)
            run = solve_fem(p, StateField.uniform(grid, uniform_point), grid)
            oracle = solve_ode(p, count_point, grid)
            ode_density = oracle.states[-1] / POPULATION
            # Compare at x=0, far from the pinned Dirichlet end.
            errors.append(np.abs(run.snapshots[-1][:, 0] - ode_density).max())
        assert errors[0] / errors[1] >= 1.7

    def test_implicit_diffusion_stable_at_large_tau(self):
        # Stepping a pure-diffusion profile at tau far beyond the explicit
        # bound stays dissipative: no growth and no oscillation beyond
        # roundoff-level undershoot, even when tau doubles.
        from seirhcd.model import ModelParams

        p = ModelParams(
            alpha_i=0.0, alpha_e=0.0, beta=0.5, eps_hc=0.0, mu=0.0,
            t_inc=1e9, t_inf=1e9, t_hosp=1e9, t_crit=1e9, t_imm=1e9,
            v_s=0.5, v_e=0.5, v_i=0.5, v_r=0.5, population=1000,
        )
        for nt in (20, 10):  # tau = 0.5 and 1.0; explicit bound is ~4e-4
            grid = GridSpec(nx=50, nt=nt, t_end=10.0)
            x = grid.x()
            values = np.zeros((7, x.size))
            values[0] = np.exp(-((x - 0.4) ** 2) / 1e-2)
            values[6] = 1.0  # immobile background keeps the coefficient non-degenerate
            field = StateField(x, values)
            peak = values[0].max()
            for j in range(nt):
                sys = assemble_step(field, p, grid, j * grid.tau, "s")
                new = tridiagonal_solve(sys)
                assert new.min() >= -1e-8 * peak
                assert new.max() <= peak * (1.0 + 1e-12)
                values = values.copy()
                values[0] = new
                field = StateField(x, values)

    def test_mesh_convergence_second_order(self, base_params):
        # Pure smooth diffusion against a fine reference; halving h should
        # shrink the error by about 4 (at least 3.5).
        from seirhcd.model import ModelParams

        p = ModelParams(
            alpha_i=0.0, alpha_e=0.0, beta=0.5, eps_hc=0.0, mu=0.0,
            t_inc=1e9, t_inf=1e9, t_hosp=1e9, t_crit=1e9, t_imm=1e9,
            v_s=0.02, v_e=0.0, v_i=0.0, v_r=0.0, population=1000,
        )
        t_end = 2.0
        nt = 2000  # tiny tau so the spatial error dominates

        def s_profile(nx):
            grid = GridSpec(nx=nx, nt=nt, t_end=t_end)
            x = grid.x()
            values = np.zeros((7, x.size))
            values[0] = 0.5 + 0.4 * np.cos(np.pi * x)  # zero-slope at x=0
            run = solve_fem(p, StateField(x, values), grid)
            return run.snapshots[-1][0]

        ref = s_profile(400)
        err = []
        for nx in (25, 50):
            coarse = s_profile(nx)
            stride = 400 // nx
            err.append(np.abs(coarse - ref[::stride]).max())
        assert err[0] / err[1] >= 3.5

    def test_cross_solver_daily_integrals_agree(self, base_params, cap_field):
        grid = GridSpec(nx=100, nt=64 * 40, t_end=40.0)
        init = cap_field(grid)
        fdm_run = solve_fdm(base_params, init, grid)
        fem_run = solve_fem(base_params, init, grid)
        x = init.x
        for row in (2, 5, 6):  # i, c, d
            a = np.trapezoid(fdm_run.snapshots[:, row, :], x, axis=1)
            b = np.trapezoid(fem_run.snapshots[:, row, :], x, axis=1)
            scale = np.maximum(np.abs(a), np.abs(a).max() * 1e-3)
            assert np.max(np.abs(a - b) / scale) < 0.02

    def test_bitwise_determinism(self, base_params, cap_field):
        grid = GridSpec(nx=30, nt=100, t_end=5.0)
        run1 = solve_fem(base_params, cap_field(grid), grid)
        run2 = solve_fem(base_params, cap_field(grid), grid)
        assert np.array_equal(run1.snapshots, run2.snapshots)
