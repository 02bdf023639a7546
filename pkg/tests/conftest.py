import numpy as np
import pytest

from seirhcd.model import GridSpec, ModelParams, StateField, StatePoint
from seirhcd.observe import bump

POPULATION = 2_798_170

#: Initial head counts of the baseline outbreak scenario.
BASE_COUNTS = {
    "s": 2_734_917,
    "e": 4_329,
    "i": 3_508,
    "r": 32_333,
    "h": 219,
    "c": 54,
    "d": 4_932,
}


@pytest.fixture
def base_params() -> ModelParams:
    """Baseline parameter set used throughout the direct-problem tests."""
    return ModelParams(
        alpha_i=0.3856,
        alpha_e=0.0922,
        beta=0.4,
        eps_hc=0.0376,
        mu=0.4754,
        t_inc=5.0,
        t_inf=8.0,
        t_hosp=7.0,
        t_crit=9.0,
        t_imm=175.0,
        v_s=5e-5,
        v_e=1e-3,
        v_i=1e-10,
        v_r=5e-5,
        population=POPULATION,
    )


@pytest.fixture
def uniform_point() -> StatePoint:
    return StatePoint(*(BASE_COUNTS[name] / POPULATION for name in "seirhcd"))


@pytest.fixture
def count_point() -> StatePoint:
    return StatePoint(*(float(BASE_COUNTS[name]) for name in "seirhcd"))


def cap_initial_values(x: np.ndarray) -> np.ndarray:
    """Baseline seeded initial field: bump sums for s and e, uniform rest."""
    values = np.empty((7, x.size))
    values[0] = (
        bump(x, 1.0, -1.0, 1.0, 4)
        + bump(x, 1.0, 0.35, 1e-2, 2)
        + 0.125 * (bump(x, 1.0, 0.62, 1e-5) + bump(x, 1.0, 0.52, 1e-5) + bump(x, 1.0, 0.42, 1e-5))
        + 0.25 * bump(x, 1.0, 0.735, 1e-5)
    )
    values[1] = 0.05 * bump(x, 1.0, 0.75, 1e-5)
    values[2] = BASE_COUNTS["i"] / POPULATION
    values[3] = BASE_COUNTS["r"] / POPULATION
    values[4] = BASE_COUNTS["h"] / POPULATION
    values[5] = BASE_COUNTS["c"] / POPULATION
    values[6] = BASE_COUNTS["d"] / POPULATION
    return values


@pytest.fixture
def cap_field():
    def make(grid: GridSpec) -> StateField:
        x = grid.x()
        return StateField(x, cap_initial_values(x))

    return make
