import dataclasses
import math

import numpy as np
import pytest

from seirhcd.fdm import UNBOUNDED, apply_boundary, fdm_step, max_stable_timestep, solve_fdm
from seirhcd.model import (
    GridSpec,
    StateField,
    StatePoint,
    reaction_terms,
    solve_ode,
    total_density,
)

from conftest import POPULATION


def make_field(grid, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    return StateField(grid.x(), rng.uniform(0.0, scale, size=(7, grid.nx + 1)))


class TestApplyBoundary:
    def test_constant_field_satisfies_zero_slope(self):
        grid = GridSpec(nx=8, nt=1, t_end=1.0)
        field = StateField.uniform(grid, StatePoint(0.5, 0.5, 0.5, 0.5, 0.1, 0.1, 0.1))
        out = apply_boundary(field)
        for c in range(4):
            assert out.values[c, 0] == pytest.approx(0.5, abs=0)

    def test_one_sided_stencil_value(self):
        grid = GridSpec(nx=8, nt=1, t_end=1.0)
        field = StateField.zeros(grid)
        field.values[0, 1] = 0.4
        field.values[0, 2] = 0.1
        out = apply_boundary(field)
        assert out.values[0, 0] == pytest.approx((1.6 - 0.1) / 3.0, rel=1e-15)
        assert out.values[0, 0] == pytest.approx(0.5, rel=1e-15)

    def test_right_boundary_zeroed_for_all_compartments(self):
        grid = GridSpec(nx=8, nt=1, t_end=1.0)
        field = make_field(grid, seed=1)
        out = apply_boundary(field)
        assert np.all(out.values[:, -1] == 0.0)

    def test_non_diffusing_left_values_untouched(self):
        grid = GridSpec(nx=8, nt=1, t_end=1.0)
        field = make_field(grid, seed=2)
        before = field.values[4:, 0].copy()
        out = apply_boundary(field)
        np.testing.assert_array_equal(out.values[4:, 0], before)


class TestFdmStep:
    def test_zero_field_stays_zero(self, base_params):
        grid = GridSpec(nx=16, nt=10, t_end=1.0)
        out = fdm_step(StateField.zeros(grid), base_params, grid, 0.0)
        assert np.all(out.values == 0.0)

    def test_uniform_zero_velocity_is_euler_reaction_step(self, base_params, uniform_point):
        p = dataclasses.replace(base_params, v_s=0.0, v_e=0.0, v_i=0.0, v_r=0.0)
        grid = GridSpec(nx=16, nt=100, t_end=10.0)
        field = StateField.uniform(grid, uniform_point)
        out = fdm_step(field, p, grid, 0.0)
        euler = uniform_point.to_array() + grid.tau * reaction_terms(
            uniform_point.to_array()[:, None], p, 0.0
        )[:, 0]
        for k in range(grid.nx):  # all nodes except the Dirichlet end
            np.testing.assert_allclose(out.values[:, k], euler, rtol=1e-15)
        assert np.all(out.values[:, -1] == 0.0)

    def test_matches_independent_scalar_transcription(self, base_params, cap_field):
        """Duplicate-transcription oracle: plain scalar loops over the update rules."""
        p = base_params
        grid = GridSpec(nx=50, nt=2000, t_end=10.0)
        field = cap_field(grid)
        out = fdm_step(field, p, grid, 0.0)

        u = field.values
        h, tau = grid.h, grid.tau
        nx = grid.nx
        beta = 0.4
        n = [sum(u[c, k] for c in range(7)) for k in range(nx + 1)]
        vel = [p.v_s, p.v_e, p.v_i, p.v_r]
        expected = np.zeros((7, nx + 1))
        for k in range(nx + 1):
            s, e, i, r, hh, cc, dd = (u[c, k] for c in range(7))
            react = [
                -p.alpha_i * s * i - p.alpha_e * s * e + r / p.t_imm,
                p.alpha_i * s * i + p.alpha_e * s * e - e / p.t_inc,
                e / p.t_inc - i / p.t_inf,
                beta * i / p.t_inf + (1 - p.eps_hc) * hh / p.t_hosp - r / p.t_imm,
                (1 - beta) * i / p.t_inf + (1 - p.mu) * cc / p.t_crit - hh / p.t_hosp,
                p.eps_hc * hh / p.t_hosp - cc / p.t_crit,
                p.mu * cc / p.t_crit,
            ]
            for c in range(7):
                expected[c, k] = u[c, k] + tau * react[c]
        for c in range(4):
            for k in range(1, nx):
                dn = (n[k + 1] - n[k - 1]) / (2 * h)
                du = (u[c, k + 1] - u[c, k - 1]) / (2 * h)
                lap = (u[c, k + 1] - 2 * u[c, k] + u[c, k - 1]) / h**2
                expected[c, k] += tau * vel[c] * (dn * du + n[k] * lap)
        for c in range(4):
            expected[c, 0] = (4 * expected[c, 1] - expected[c, 2]) / 3
        expected[:, nx] = 0.0

        np.testing.assert_allclose(out.values, expected, rtol=0, atol=1e-13)

    def test_non_finite_output_names_location(self, base_params, cap_field):
        grid = GridSpec(nx=16, nt=10, t_end=1.0)
        field = cap_field(grid)
        field.values[2, 5] = 1e308
        field.values[0, 5] = 1e308
        with pytest.raises(FloatingPointError, match="node"):
            fdm_step(field, base_params, grid, 0.0)


class TestMaxStableTimestep:
    def test_zero_velocities_unbounded(self, base_params):
        p = dataclasses.replace(base_params, v_s=0.0, v_e=0.0, v_i=0.0, v_r=0.0)
        grid = GridSpec(nx=100, nt=1, t_end=1.0)
        assert max_stable_timestep(p, grid, 1.0) == UNBOUNDED

    def test_cfl_formula(self, base_params):
        p = dataclasses.replace(base_params, v_s=0.0, v_e=1e-3, v_i=0.0, v_r=0.0)
        grid = GridSpec(nx=100, nt=1, t_end=1.0)  # h = 0.01
        assert max_stable_timestep(p, grid, 1.0) == pytest.approx(0.05, rel=1e-15)

    def test_doubling_nx_quarters_bound(self, base_params):
        coarse = max_stable_timestep(base_params, GridSpec(nx=50, nt=1, t_end=1.0), 1.2)
        fine = max_stable_timestep(base_params, GridSpec(nx=100, nt=1, t_end=1.0), 1.2)
        assert fine == pytest.approx(coarse / 4.0, rel=1e-12)


class TestSolveFdm:
    def test_zero_initial_field_gives_zero_trajectory(self, base_params):
        grid = GridSpec(nx=16, nt=320, t_end=5.0)
        run = solve_fdm(base_params, StateField.zeros(grid), grid)
        assert np.all(run.snapshots == 0.0)
        assert run.clamp_count == 0

    def test_refuses_unstable_timestep_with_suggestion(self, base_params, cap_field):
        grid = GridSpec(nx=200, nt=100, t_end=100.0)  # tau = 1 far above the bound
        with pytest.raises(ValueError, match="use nt >="):
            solve_fdm(base_params, cap_field(grid), grid)

    def test_zero_diffusion_matches_ode_oracle_at_first_order(
        self, base_params, uniform_point, count_point
    ):
        p = dataclasses.replace(base_params, v_s=0.0, v_e=0.0, v_i=0.0, v_r=0.0)
        t_end = 20.0
        errors = []
        for nt in (400, 800):
            grid = GridSpec(nx=8, nt=nt, t_end=t_end)
            run = solve_fdm(p, StateField.uniform(grid, uniform_point), grid)
            oracle = solve_ode(p, count_point, grid)
            ode_density = oracle.states[-1] / POPULATION
            errors.append(np.abs(run.snapshots[-1][:, 0] - ode_density).max())
        assert errors[0] / errors[1] >= 1.9

    def test_pointwise_density_invariant_without_diffusion(self, base_params, uniform_point):
        p = dataclasses.replace(base_params, v_s=0.0, v_e=0.0, v_i=0.0, v_r=0.0)
        grid = GridSpec(nx=8, nt=4000, t_end=200.0)
        run = solve_fdm(p, StateField.uniform(grid, uniform_point), grid)
        n0 = total_density(run.field(0))
        for k in range(run.snapshots.shape[0]):
            nk = run.snapshots[k].sum(axis=0)
            np.testing.assert_allclose(nk[:-1], n0[:-1], rtol=1e-10)

    def test_dirichlet_and_zero_slope_hold_at_every_snapshot(self, base_params, cap_field):
        grid = GridSpec(nx=50, nt=1280, t_end=10.0)
        run = solve_fdm(base_params, cap_field(grid), grid)
        for k in range(1, run.snapshots.shape[0]):
            values = run.snapshots[k]
            assert np.all(values[:, -1] == 0.0)
            for c in range(4):
                residual = (-3 * values[c, 0] + 4 * values[c, 1] - values[c, 2]) / (2 * grid.h)
                assert abs(residual) <= 1e-12

    def test_bitwise_determinism(self, base_params, cap_field):
        grid = GridSpec(nx=40, nt=640, t_end=5.0)
        run1 = solve_fdm(base_params, cap_field(grid), grid)
        run2 = solve_fdm(base_params, cap_field(grid), grid)
        assert np.array_equal(run1.snapshots, run2.snapshots)

    def test_single_wave_rises_and_decays(self, base_params, cap_field):
        grid = GridSpec(nx=60, nt=6400, t_end=100.0)
        run = solve_fdm(base_params, cap_field(grid), grid)
        i_integral = np.trapezoid(run.snapshots[:, 2, :], run.init.x, axis=1)
        peak = int(np.argmax(i_integral))
        assert 0 < peak < i_integral.size - 1
        assert i_integral[peak] > 3 * i_integral[0]
        assert i_integral[-1] < i_integral[peak]
