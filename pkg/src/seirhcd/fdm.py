"""Explicit finite-difference solver for the spatial SEIR-HCD system.

The scheme advances the interior nodes with a forward-Euler step whose
diffusion part splits the divergence form into a product of first
differences (gradient of the total density times gradient of the
compartment) plus the total density times a second difference.  The left
boundary enforces zero slope through a second-order one-sided stencil, the
right boundary is homogeneous Dirichlet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    DIFFUSING,
    GridSpec,
    ModelParams,
    SimulationRun,
    StateField,
    reaction_terms,
    total_density,
    validate_params,
)

#: Returned by max_stable_timestep when every velocity is zero.
UNBOUNDED = math.inf

FdmRun = SimulationRun


def apply_boundary(u: StateField) -> StateField:
    """Fill boundary nodes in place and return the field.

    Diffusing compartments get u_0 = (4 u_1 - u_2) / 3, which zeroes the
    one-sided slope stencil at x=0; h, c, d keep their reaction-updated
    value there.  All compartments are pinned to 0 at x=1.
    """
    values = u.values
    for c in DIFFUSING:
        values[c, 0] = (4.0 * values[c, 1] - values[c, 2]) / 3.0
    values[:, -1] = 0.0
    return u


def fdm_step(u_j: StateField, p: ModelParams, grid: GridSpec, t_j: float) -> StateField:
    """Advance one explicit step from time t_j; returns the new field.

    Interior nodes k = 1..nx-1 are updated for all compartments; the
    non-diffusing ones (h, c, d) also take the plain reaction update at
    k = 0 before the boundary fill.
    """
    h = grid.h
    tau = grid.tau
    values = u_j.values
    n = total_density(u_j)

    react = reaction_terms(values, p, t_j)
    new = values + tau * react

    dn = (n[2:] - n[:-2]) / (2.0 * h)
    velocities = p.velocities
    for c in DIFFUSING:
        uc = values[c]
        du = (uc[2:] - uc[:-2]) / (2.0 * h)
        lap = (uc[2:] - 2.0 * uc[1:-1] + uc[:-2]) / (h * h)
        new[c, 1:-1] += tau * velocities[c] * (dn * du + n[1:-1] * lap)

    out = apply_boundary(StateField(u_j.x, new))
    if not np.all(np.isfinite(out.values)):
        bad = np.argwhere(~np.isfinite(out.values))
        comp, k = bad[0]
        raise FloatingPointError(
            f"non-finite value at node k={k} (compartment index {comp}) stepping from t={t_j:g}"
        )
    return out


def max_stable_timestep(p: ModelParams, grid: GridSpec, n_max: float) -> float:
    """Diffusion CFL bound tau_max = h^2 / (2 n_max v_max).

    Returns the UNBOUNDED sentinel when all velocities vanish.  Reaction
    stiffness is not covered here; callers should keep tau well below the
    smallest duration separately.
    """
    v_max = max(p.velocities)
    if v_max == 0.0 or n_max == 0.0:
        return UNBOUNDED
    return grid.h ** 2 / (2.0 * n_max * v_max)


def solve_fdm(
    p: ModelParams,
    init: StateField,
    grid: GridSpec,
    snapshot_every: float = 1.0,
) -> SimulationRun:
    """Run the explicit scheme over the full grid with periodic snapshots.

    Snapshots are stored at t=0 and every ``snapshot_every`` days (the steps
    nearest those times).  Negative densities are clamped to zero after each
    step and counted in ``clamp_count``.
    """
    violations = validate_params(p)
    if violations:
        raise ValueError("invalid parameters: " + "; ".join(violations))
    if init.x.size != grid.nx + 1:
        raise ValueError("initial field does not conform to the grid")

    n_max = float(total_density(init).max())
    tau_max = max_stable_timestep(p, grid, n_max)
    if grid.tau > tau_max:
        suggested = int(math.ceil(grid.t_end / tau_max))
        raise ValueError(
            f"tau={grid.tau:g} exceeds the stability bound {tau_max:g}; "
            f"use nt >= {suggested}"
        )

    times = grid.times()
    # Steps closest to each requested snapshot time, always including t=0.
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
        u = fdm_step(u, p, grid, times[j])
        negatives = u.values < 0.0
        if negatives.any():
            clamp_count += int(negatives.sum())
            u.values[negatives] = 0.0
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
        solver="fdm",
    )
