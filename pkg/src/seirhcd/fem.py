"""Linear finite-element solver for the spatial SEIR-HCD system.

Each time step treats diffusion implicitly and linearizes the reaction
terms by freezing coupling coefficients at the previous step, giving one
tridiagonal solve per diffusing compartment.  Hospitalized, critical, and
dead compartments have no spatial term and advance by the explicit
reaction rule.  Used to cross-validate the finite-difference solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .model import (
    GridSpec,
    ModelParams,
    SimulationRun,
    StateField,
    reaction_terms,
    total_density,
    validate_params,
)


@dataclass(frozen=True)
class ElementMatrices:
    """Local 2x2 blocks for one linear element of width h."""

    stiffness: np.ndarray  # (1/h) [[1, -1], [-1, 1]]
    mass: np.ndarray  # (h/6) [[2, 1], [1, 2]]

    @classmethod
    def for_width(cls, h: float) -> "ElementMatrices":
        stiffness = np.array([[1.0, -1.0], [-1.0, 1.0]]) / h
        mass = np.array([[2.0, 1.0], [1.0, 2.0]]) * (h / 6.0)
        return cls(stiffness=stiffness, mass=mass)


@dataclass
class TridiagonalSystem:
    """Banded system A u = rhs with bands stored full-length.

    ``sub[k]`` couples row k to k-1 (sub[0] unused), ``super[k]`` couples
    row k to k+1 (super[-1] unused).
    """

    sub: np.ndarray
    diag: np.ndarray
    super: np.ndarray
    rhs: np.ndarray

    def to_dense(self) -> np.ndarray:
        n = self.diag.size
        a = np.zeros((n, n))
        a[np.arange(n), np.arange(n)] = self.diag
        a[np.arange(1, n), np.arange(n - 1)] = self.sub[1:]
        a[np.arange(n - 1), np.arange(1, n)] = self.super[:-1]
        return a


@numba.njit(cache=True)
def _thomas(sub, diag, sup, rhs):
    n = diag.size
    c = np.empty(n)
    d = np.empty(n)
    if diag[0] == 0.0:
        return np.empty(0), 0
    c[0] = sup[0] / diag[0]
    d[0] = rhs[0] / diag[0]
    for k in range(1, n):
        pivot = diag[k] - sub[k] * c[k - 1]
        if pivot == 0.0:
            return np.empty(0), k
        c[k] = sup[k] / pivot
        d[k] = (rhs[k] - sub[k] * d[k - 1]) / pivot
    x = np.empty(n)
    x[n - 1] = d[n - 1]
    for k in range(n - 2, -1, -1):
        x[k] = d[k] - c[k] * x[k + 1]
    return x, -1


def tridiagonal_solve(sys: TridiagonalSystem) -> np.ndarray:
    """Solve the banded system by the Thomas algorithm."""
    x, bad_row = _thomas(sys.sub, sys.diag, sys.super, sys.rhs)
    if bad_row >= 0:
        raise np.linalg.LinAlgError(f"zero pivot at row {bad_row}")
    return x


def stiffness_bands(n_nodal: np.ndarray, v: float, h: float):
    """Assembled diffusion bands with per-element coefficient v * mean(n).

    Returns (sub, diag, super) of the global stiffness before boundary-row
    substitution; element stiffness row sums are zero by construction.
    """
    kappa = v * 0.5 * (n_nodal[:-1] + n_nodal[1:]) / h  # per element
    nn = n_nodal.size
    sub = np.zeros(nn)
    diag = np.zeros(nn)
    sup = np.zeros(nn)
    diag[:-1] += kappa
    diag[1:] += kappa
    sub[1:] = -kappa
    sup[:-1] = -kappa
    return sub, diag, sup


def _mass_bands(h: float, nn: int, coeff: np.ndarray | None = None):
    """Consistent-mass bands, optionally weighted by a per-element coefficient."""
    if coeff is None:
        c_el = np.ones(nn - 1)
    else:
        c_el = 0.5 * (coeff[:-1] + coeff[1:])
    sub = np.zeros(nn)
    diag = np.zeros(nn)
    sup = np.zeros(nn)
    diag[:-1] += c_el * (2.0 * h / 6.0)
    diag[1:] += c_el * (2.0 * h / 6.0)
    sub[1:] = c_el * (h / 6.0)
    sup[:-1] = c_el * (h / 6.0)
    return sub, diag, sup


def _mass_apply(h: float, vec: np.ndarray) -> np.ndarray:
    """Consistent mass matrix times a nodal vector."""
    out = np.empty_like(vec)
    out[1:-1] = (h / 6.0) * (vec[:-2] + 4.0 * vec[1:-1] + vec[2:])
    out[0] = (h / 6.0) * (2.0 * vec[0] + vec[1])
    out[-1] = (h / 6.0) * (vec[-2] + 2.0 * vec[-1])
    return out


def _decay_and_source(u_prev: np.ndarray, p: ModelParams, t: float, compartment: str):
    """Implicit decay coefficient field and explicit source field.

    Any reaction term containing the solved compartment goes implicit with
    the other factors frozen at the previous step; the rest feed the RHS.
    """
    s, e, i, r, h, _, _ = u_prev
    beta = p.beta_at(t)
    if compartment == "s":
        decay = p.alpha_i * i + p.alpha_e * e
        source = r / p.t_imm
    elif compartment == "e":
        decay = np.full_like(s, 1.0 / p.t_inc) - p.alpha_e * s
        source = p.alpha_i * s * i
    elif compartment == "i":
        decay = np.full_like(s, 1.0 / p.t_inf)
        source = e / p.t_inc
    elif compartment == "r":
        decay = np.full_like(s, 1.0 / p.t_imm)
        source = beta / p.t_inf * i + (1.0 - p.eps_hc) / p.t_hosp * h
    else:
        raise ValueError(f"compartment {compartment!r} has no diffusion equation")
    return decay, source


_VELOCITY = {"s": "v_s", "e": "v_e", "i": "v_i", "r": "v_r"}
_ROW = {"s": 0, "e": 1, "i": 2, "r": 3}


def assemble_step(
    u_prev: StateField,
    p: ModelParams,
    grid: GridSpec,
    t: float,
    compartment: str,
) -> TridiagonalSystem:
    """Assemble the new-time-level tridiagonal system for one compartment.

    The system is M/tau + diffusion stiffness + frozen-coefficient reaction
    mass on the left, and M/tau * u_prev + M * source on the right; the last
    row is replaced by the Dirichlet condition u(1) = 0.
    """
    if compartment not in _VELOCITY:
        raise ValueError(f"compartment {compartment!r} has no diffusion equation")
    if u_prev.x.size != grid.nx + 1:
        raise ValueError("field does not conform to the grid")
    h = grid.h
    tau = grid.tau
    n = total_density(u_prev)
    v = getattr(p, _VELOCITY[compartment])
    decay, source = _decay_and_source(u_prev.values, p, t, compartment)

    k_sub, k_diag, k_sup = stiffness_bands(n, v, h)
    m_sub, m_diag, m_sup = _mass_bands(h, grid.nx + 1)
    c_sub, c_diag, c_sup = _mass_bands(h, grid.nx + 1, coeff=decay)

    sub = m_sub / tau + k_sub + c_sub
    diag = m_diag / tau + k_diag + c_diag
    sup = m_sup / tau + k_sup + c_sup

    prev = u_prev.values[_ROW[compartment]]
    rhs = _mass_apply(h, prev / tau + source)

    # Dirichlet row at x = 1.
    sub[-1] = 0.0
    diag[-1] = 1.0
    sup[-1] = 0.0
    rhs[-1] = 0.0
    # Natural (zero-flux) boundary at x = 0 leaves the first row untouched.

    if np.any(diag == 0.0):
        raise np.linalg.LinAlgError("degenerate assembly")
    return TridiagonalSystem(sub=sub, diag=diag, super=sup, rhs=rhs)


def solve_fem(
    p: ModelParams,
    init: StateField,
    grid: GridSpec,
    snapshot_every: float = 1.0,
) -> SimulationRun:
    """Semi-implicit FEM time march with daily snapshots.

    Same snapshot/clamp conventions as solve_fdm; diffusion is implicit so
    the step size is limited only by the reaction scales.
    """
    violations = validate_params(p)
    if violations:
        raise ValueError("invalid parameters: " + "; ".join(violations))
    if init.x.size != grid.nx + 1:
        raise ValueError("initial field does not conform to the grid")

    times = grid.times()
    n_snap = int(math.floor(grid.t_end / snapshot_every + 1e-9))
    snap_times = np.arange(n_snap + 1) * snapshot_every
    snap_steps = np.rint(snap_times / grid.tau).astype(int)

    snapshots = np.empty((snap_steps.size, 7, grid.nx + 1))
    clamp_count = 0
    u = init.copy()

    next_snap = 0
    if snap_steps[next_snap] == 0:
        snapshots[next_snap] = u.values
        next_snap += 1
    for j in range(grid.nt):
        t = times[j]
        react = reaction_terms(u.values, p, t)
        new = u.values.copy()
        new[4:] += grid.tau * react[4:]
        for compartment in ("s", "e", "i", "r"):
            system = assemble_step(u, p, grid, t, compartment)
            new[_ROW[compartment]] = tridiagonal_solve(system)
        new[:, -1] = 0.0
        if not np.all(np.isfinite(new)):
            raise FloatingPointError(f"non-finite FEM state stepping from t={t:g}")
        negatives = new < 0.0
        if negatives.any():
            clamp_count += int(negatives.sum())
            new[negatives] = 0.0
        u = StateField(u.x, new)
        if next_snap < snap_steps.size and snap_steps[next_snap] == j + 1:
            snapshots[next_snap] = u.values
            next_snap += 1

    return SimulationRun(
        params=p,
        grid=grid,
        init=init,
        snapshot_times=snap_times,
        snapshots=snapshots,
        clamp_count=clamp_count,
        solver="fem",
    )
