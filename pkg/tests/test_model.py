import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seirhcd.model import (
    BetaSchedule,
    GridSpec,
    ModelParams,
    StateField,
    StatePoint,
    reaction_rhs,
    solve_ode,
    total_density,
    validate_params,
)

from conftest import POPULATION, cap_initial_values


def test_validate_accepts_baseline(base_params):
    assert validate_params(base_params) == []


def test_validate_flags_zero_duration(base_params):
    bad = dataclasses.replace(base_params, t_inf=0.0)
    assert "t_inf must be > 0" in validate_params(bad)


def test_validate_flags_fraction_above_one(base_params):
    bad = dataclasses.replace(base_params, mu=1.2)
    assert "mu must be <= 1" in validate_params(bad)


def test_validate_flags_negative_velocity_and_beta(base_params):
    bad = dataclasses.replace(base_params, v_e=-1.0, beta=1.5)
    violations = validate_params(bad)
    assert "v_e must be >= 0" in violations
    assert "beta must be within [0, 1]" in violations


def test_beta_schedule_lookup():
    schedule = BetaSchedule([0.1, 0.2, 0.3])
    assert schedule(0.0) == 0.1
    assert schedule(1.5) == 0.2
    assert schedule(10.0) == 0.3  # last value held


def test_reaction_zero_state_gives_zero(base_params):
    out = reaction_rhs(StatePoint.zeros(), base_params)
    assert out.to_array().tolist() == [0.0] * 7


def test_reaction_dead_inflow_matches_hand_evaluation(base_params):
    c0 = 54 / POPULATION
    u = StatePoint(0.9, 0.001, 0.002, 0.01, 1e-4, c0, 0.0017)
    out = reaction_rhs(u, base_params, t=0.0)
    assert out.d == pytest.approx(0.4754 * c0 / 9.0, rel=1e-14)


def test_reaction_rejects_non_finite(base_params):
    with pytest.raises(ValueError, match="non-finite state"):
        reaction_rhs(StatePoint(np.nan, 0, 0, 0, 0, 0, 0), base_params)


def test_mass_balance_many_random_states(base_params):
    rng = np.random.default_rng(7)
    states = rng.uniform(0.0, 1.0, size=(10_000, 7))
    from seirhcd.model import reaction_terms

    derivs = reaction_terms(states.T, base_params, t=0.0)
    residual = np.abs(derivs.sum(axis=0))
    scale = np.abs(derivs).sum(axis=0)
    assert np.all(residual <= 1e-14 * np.maximum(scale, 1e-300))


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(min_value=0.0, max_value=2.0), min_size=7, max_size=7),
    st.floats(min_value=0.01, max_value=1.0),
)
def test_mass_balance_property(values, alpha):
    p = ModelParams(
        alpha_i=alpha, alpha_e=alpha / 3, beta=0.5, eps_hc=0.1, mu=0.3,
        t_inc=4.0, t_inf=9.0, t_hosp=6.0, t_crit=11.0, t_imm=120.0,
        v_s=0.0, v_e=0.0, v_i=0.0, v_r=0.0, population=1000,
    )
    out = reaction_rhs(StatePoint(*values), p).to_array()
    assert abs(out.sum()) <= 1e-14 * max(np.abs(out).sum(), 1e-300)


def test_beta_raises_r_flow_and_lowers_h_flow(base_params):
    rng = np.random.default_rng(3)
    for _ in range(50):
        u = StatePoint(*rng.uniform(0.01, 1.0, size=7))
        lo = dataclasses.replace(base_params, beta=0.2)
        hi = dataclasses.replace(base_params, beta=0.7)
        out_lo = reaction_rhs(u, lo)
        out_hi = reaction_rhs(u, hi)
        assert out_hi.r > out_lo.r
        assert out_hi.h < out_lo.h


def test_total_density_zero_field():
    grid = GridSpec(nx=10, nt=1, t_end=1.0)
    assert np.all(total_density(StateField.zeros(grid)) == 0.0)


def test_total_density_matches_analytic_cap_sum():
    grid = GridSpec(nx=64, nt=1, t_end=1.0)
    x = grid.x()
    field = StateField(x, cap_initial_values(x))
    expected = cap_initial_values(x).sum(axis=0)
    np.testing.assert_allclose(total_density(field), expected, rtol=0, atol=0)


class TestSolveOde:
    def test_zero_initial_state_stays_zero(self, base_params):
        traj = solve_ode(base_params, StatePoint.zeros(), GridSpec(nx=2, nt=50, t_end=10.0))
        assert np.all(traj.states == 0.0)

    def test_decoupled_compartments_stay_constant(self, base_params):
        u0 = StatePoint(s=1000.0, e=0.0, i=0.0, r=0.0, h=0.0, c=0.0, d=77.0)
        traj = solve_ode(base_params, u0, GridSpec(nx=2, nt=100, t_end=50.0))
        np.testing.assert_allclose(traj.states[:, 0], 1000.0, rtol=1e-15)
        np.testing.assert_allclose(traj.states[:, 6], 77.0, rtol=1e-15)

    def test_total_count_is_conserved(self, base_params, count_point):
        grid = GridSpec(nx=2, nt=400, t_end=200.0)
        traj = solve_ode(base_params, count_point, grid)
        totals = traj.states.sum(axis=1)
        # The compartments exchange mass but their sum never drifts.
        np.testing.assert_allclose(totals, totals[0], atol=1e-9 * POPULATION)

    def test_fourth_order_richardson_ratio(self, base_params, count_point):
        t_end = 40.0
        ends = []
        for nt in (40, 80, 160):
            traj = solve_ode(base_params, count_point, GridSpec(nx=2, nt=nt, t_end=t_end))
            ends.append(traj.states[-1])
        err_coarse = np.linalg.norm(ends[0] - ends[1])
        err_fine = np.linalg.norm(ends[1] - ends[2])
        assert err_coarse / err_fine >= 12.0

    def test_non_finite_step_reports_time(self, base_params):
        wild = dataclasses.replace(base_params, alpha_i=1e300)
        huge = StatePoint(1e300, 1e300, 1e300, 0, 0, 0, 0)
        with pytest.raises(FloatingPointError, match="t="):
            solve_ode(wild, huge, GridSpec(nx=2, nt=10, t_end=10.0))

    def test_rejects_invalid_params(self, base_params, count_point):
        bad = dataclasses.replace(base_params, mu=2.0)
        with pytest.raises(ValueError, match="mu"):
            solve_ode(bad, count_point, GridSpec(nx=2, nt=10, t_end=1.0))
