"""Core SEIR-HCD types, reaction kinetics, and the RK4 reference integrator.

The compartment densities are dimensionless fractions of the total
population ``N``: susceptible (s), asymptomatic carriers (e), symptomatic
infected (i), recovered (r), hospitalized (h), critical/ventilated (c),
and dead (d).  The reaction kinetics live here; both PDE solvers and the
zero-diffusion ODE oracle share them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

COMPARTMENTS = ("s", "e", "i", "r", "h", "c", "d")

#: Canonical ordering of the 14 scannable model parameters, used by the
#: sensitivity, emulation, and batched-evaluation machinery.
PARAM_NAMES = (
    "alpha_i",
    "alpha_e",
    "t_inc",
    "t_inf",
    "beta",
    "eps_hc",
    "t_hosp",
    "t_imm",
    "mu",
    "t_crit",
    "v_s",
    "v_e",
    "v_i",
    "v_r",
)

#: Indices of the compartments that diffuse (s, e, i, r).  Hospitalized,
#: critical, and dead populations do not move in space.
DIFFUSING = (0, 1, 2, 3)


class BetaSchedule:
    """Piecewise-constant daily series for the recovery fraction beta(t).

    ``daily[k]`` applies on day ``[k, k+1)``; the last value is held for
    any later time.
    """

    def __init__(self, daily: Sequence[float]):
        values = np.asarray(daily, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("beta schedule needs a non-empty 1-D series")
        self.daily = values

    @classmethod
    def from_file(cls, path) -> "BetaSchedule":
        """Load a schedule from a text file with one value per line."""
        return cls(np.loadtxt(path, ndmin=1))

    def __call__(self, t: float) -> float:
        idx = min(max(int(t), 0), self.daily.size - 1)
        return float(self.daily[idx])

    def __repr__(self) -> str:
        return f"BetaSchedule({self.daily.size} days)"


BetaLike = Union[float, BetaSchedule]


@dataclass(frozen=True)
class ModelParams:
    """Epidemiological rates, durations, fractions, and diffusion velocities.

    Durations are in days, velocities in 1/(person*day), and ``population``
    is the total head count N that converts densities to case counts.
    """

    alpha_i: float  # transmission rate, infected -> susceptible contacts
    alpha_e: float  # transmission rate, asymptomatic -> susceptible contacts
    beta: BetaLike  # recovered share of outflow from i, in [0, 1]
    eps_hc: float  # fraction of hospitalized moving to critical care
    mu: float  # fraction of critical cases that die
    t_inc: float  # incubation duration
    t_inf: float  # infectious duration
    t_hosp: float  # hospitalization duration
    t_crit: float  # ventilation duration
    t_imm: float  # natural immunity duration
    v_s: float  # diffusion velocity of s
    v_e: float  # diffusion velocity of e
    v_i: float  # diffusion velocity of i
    v_r: float  # diffusion velocity of r
    population: int  # total population N

    def beta_at(self, t: float) -> float:
        if isinstance(self.beta, BetaSchedule):
            return self.beta(t)
        return float(self.beta)

    @property
    def velocities(self) -> tuple[float, float, float, float]:
        return (self.v_s, self.v_e, self.v_i, self.v_r)


@dataclass(frozen=True)
class StatePoint:
    """Compartment values at one location (densities) or in aggregate (counts)."""

    s: float
    e: float
    i: float
    r: float
    h: float
    c: float
    d: float

    def to_array(self) -> np.ndarray:
        return np.array([self.s, self.e, self.i, self.r, self.h, self.c, self.d])

    @classmethod
    def from_array(cls, values) -> "StatePoint":
        values = np.asarray(values, dtype=float)
        if values.shape != (7,):
            raise ValueError(f"expected 7 compartment values, got shape {values.shape}")
        return cls(*values.tolist())

    @classmethod
    def zeros(cls) -> "StatePoint":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    @property
    def total(self) -> float:
        return self.s + self.e + self.i + self.r + self.h + self.c + self.d


@dataclass(frozen=True)
class GridSpec:
    """Uniform space-time grid on [0, 1] x [0, t_end]."""

    nx: int
    nt: int
    t_end: float

    def __post_init__(self):
        if self.nx < 2:
            raise ValueError("nx must be >= 2")
        if self.nt < 1:
            raise ValueError("nt must be >= 1")
        if not self.t_end > 0:
            raise ValueError("t_end must be > 0")

    @property
    def h(self) -> float:
        return 1.0 / self.nx

    @property
    def tau(self) -> float:
        return self.t_end / self.nt

    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nx + 1)

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.nt + 1)


@dataclass
class StateField:
    """The seven compartment densities sampled on one spatial grid slice."""

    x: np.ndarray  # (nx+1,) uniform coordinates on [0, 1]
    values: np.ndarray  # (7, nx+1), rows ordered as COMPARTMENTS

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (7, self.x.size):
            raise ValueError(
                f"values shape {self.values.shape} does not match grid of {self.x.size} nodes"
            )

    @classmethod
    def zeros(cls, grid: GridSpec) -> "StateField":
        return cls(grid.x(), np.zeros((7, grid.nx + 1)))

    @classmethod
    def uniform(cls, grid: GridSpec, point: StatePoint) -> "StateField":
        values = np.repeat(point.to_array()[:, None], grid.nx + 1, axis=1)
        return cls(grid.x(), values)

    def compartment(self, name: str) -> np.ndarray:
        return self.values[COMPARTMENTS.index(name)]

    def copy(self) -> "StateField":
        return StateField(self.x.copy(), self.values.copy())


@dataclass
class SimulationRun:
    """Trajectory of a PDE solve: daily snapshots plus run bookkeeping."""

    params: ModelParams
    grid: GridSpec
    init: StateField
    snapshot_times: np.ndarray  # (n_snap,), days
    snapshots: np.ndarray  # (n_snap, 7, nx+1)
    clamp_count: int
    solver: str

    def field(self, k: int) -> StateField:
        return StateField(self.init.x, self.snapshots[k])

    def at_day(self, day: float) -> StateField:
        idx = np.flatnonzero(np.isclose(self.snapshot_times, day))
        if idx.size == 0:
            raise KeyError(f"no snapshot stored for day {day}")
        return self.field(int(idx[0]))


@dataclass
class OdeTrajectory:
    """Aggregate-count trajectory of the zero-diffusion ODE system."""

    times: np.ndarray  # (nt+1,)
    states: np.ndarray  # (nt+1, 7), counts

    def point(self, j: int) -> StatePoint:
        return StatePoint.from_array(self.states[j])


def validate_params(p: ModelParams) -> list[str]:
    """Return a list of invariant violations; empty means the params are valid."""
    violations: list[str] = []
    for name in ("t_inc", "t_inf", "t_hosp", "t_crit", "t_imm"):
        value = getattr(p, name)
        if not (math.isfinite(value) and value > 0):
            violations.append(f"{name} must be > 0")
    for name in ("eps_hc", "mu"):
        value = getattr(p, name)
        if not math.isfinite(value) or value < 0:
            violations.append(f"{name} must be >= 0")
        elif value > 1:
            violations.append(f"{name} must be <= 1")
    for name in ("alpha_i", "alpha_e"):
        value = getattr(p, name)
        if not (math.isfinite(value) and value >= 0):
            violations.append(f"{name} must be >= 0")
    for name in ("v_s", "v_e", "v_i", "v_r"):
        value = getattr(p, name)
        if not (math.isfinite(value) and value >= 0):
            violations.append(f"{name} must be >= 0")
    beta_values = p.beta.daily if isinstance(p.beta, BetaSchedule) else np.array([p.beta])
    if not np.all(np.isfinite(beta_values)):
        violations.append("beta must be finite")
    elif np.any(beta_values < 0) or np.any(beta_values > 1):
        violations.append("beta must be within [0, 1]")
    if not (isinstance(p.population, (int, np.integer)) and p.population > 0):
        violations.append("population must be a positive integer")
    return violations


def reaction_terms(values: np.ndarray, p: ModelParams, t: float) -> np.ndarray:
    """Reaction derivatives for density arrays of shape (7, ...).

    Fluxes between compartments are computed once and reused with opposite
    signs, so the columnwise sum cancels to rounding error (mass balance).
    """
    s, e, i, r, h, c, _ = values
    beta = p.beta_at(t)
    infection_i = p.alpha_i * s * i
    infection_e = p.alpha_e * s * e
    incubation = e / p.t_inc
    outflow_i = i / p.t_inf
    waning = r / p.t_imm
    discharge = h / p.t_hosp
    vent_out = c / p.t_crit
    return np.stack(
        [
            -infection_i - infection_e + waning,
            infection_i + infection_e - incubation,
            incubation - outflow_i,
            beta * outflow_i + (1.0 - p.eps_hc) * discharge - waning,
            (1.0 - beta) * outflow_i + (1.0 - p.mu) * vent_out - discharge,
            p.eps_hc * discharge - vent_out,
            p.mu * vent_out,
        ]
    )


def reaction_rhs(u: StatePoint, p: ModelParams, t: float = 0.0) -> StatePoint:
    """Reaction derivative at a single point (diffusion terms excluded)."""
    values = u.to_array()
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite state")
    return StatePoint.from_array(reaction_terms(values[:, None], p, t)[:, 0])


def total_density(u: StateField) -> np.ndarray:
    """Pointwise total density n(x) = s + e + i + r + h + c + d."""
    return u.values.sum(axis=0)


def solve_ode(p: ModelParams, u0: StatePoint, grid: GridSpec) -> OdeTrajectory:
    """Integrate the aggregate-count SEIR-HCD system with classical RK4.

    ``u0`` holds compartment counts; the bilinear infection terms carry the
    1/N scaling, making this the zero-diffusion oracle for the PDE solvers
    (divide by ``p.population`` to compare against uniform density runs).
    """
    violations = validate_params(p)
    if violations:
        raise ValueError("invalid parameters: " + "; ".join(violations))

    n = float(p.population)

    def rhs(state: np.ndarray, t: float) -> np.ndarray:
        return n * reaction_terms(state[:, None] / n, p, t)[:, 0]

    tau = grid.tau
    times = grid.times()
    states = np.empty((grid.nt + 1, 7))
    states[0] = u0.to_array()
    for j in range(grid.nt):
        t = times[j]
        y = states[j]
        k1 = rhs(y, t)
        k2 = rhs(y + 0.5 * tau * k1, t + 0.5 * tau)
        k3 = rhs(y + 0.5 * tau * k2, t + 0.5 * tau)
        k4 = rhs(y + tau * k3, t + tau)
        states[j + 1] = y + (tau / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(states[j + 1])):
            raise FloatingPointError(f"non-finite ODE state at t={times[j + 1]:g}")
    return OdeTrajectory(times, states)
