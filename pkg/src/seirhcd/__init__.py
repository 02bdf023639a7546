"""Spatial SEIR-HCD epidemic modeling, identifiability, and source inversion."""

__version__ = "0.1.0"

from .model import (
    BetaSchedule,
    GridSpec,
    ModelParams,
    OdeTrajectory,
    SimulationRun,
    StateField,
    StatePoint,
    reaction_rhs,
    solve_ode,
    total_density,
    validate_params,
)
from .fdm import apply_boundary, fdm_step, max_stable_timestep, solve_fdm
from .fem import assemble_step, solve_fem, tridiagonal_solve
from .observe import (
    Cap,
    ObservationSeries,
    SourceConfig,
    eval_initial_field,
    extract_observables,
    misfit,
    synthesize_data,
)
from .sobol import ParameterBounds, SensitivityResult, analyze_timeslices, first_order_indices, saltelli_sample
from .emulator import (
    EmulatorModel,
    LhcDesign,
    PlausibleSpace,
    fit_emulator,
    history_match,
    implausibility,
    lhc_sample,
    predict,
)
from .ttopt import TTConfig, TTResult, mapping_h, tt_optimize, update_shift
from .scenario import Scenario, load_bundled, load_scenario

__all__ = [
    "BetaSchedule",
    "Cap",
    "EmulatorModel",
    "GridSpec",
    "LhcDesign",
    "ModelParams",
    "ObservationSeries",
    "OdeTrajectory",
    "ParameterBounds",
    "PlausibleSpace",
    "Scenario",
    "SensitivityResult",
    "SimulationRun",
    "SourceConfig",
    "StateField",
    "StatePoint",
    "TTConfig",
    "TTResult",
    "analyze_timeslices",
    "apply_boundary",
    "assemble_step",
    "eval_initial_field",
    "extract_observables",
    "fdm_step",
    "first_order_indices",
    "fit_emulator",
    "history_match",
    "implausibility",
    "lhc_sample",
    "load_bundled",
    "load_scenario",
    "mapping_h",
    "max_stable_timestep",
    "misfit",
    "predict",
    "reaction_rhs",
    "saltelli_sample",
    "solve_fdm",
    "solve_fem",
    "solve_ode",
    "synthesize_data",
    "total_density",
    "tridiagonal_solve",
    "tt_optimize",
    "update_shift",
    "validate_params",
]
