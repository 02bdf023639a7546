"""Observables, synthetic data, the misfit functional, and source parameterization.

Daily observables are population-scaled spatial integrals of the
compartment densities.  The unknown initial state of the inverse problem
is parameterized by three quartic-exponent bumps ("Gaussian caps") per
seeded compartment plus a uniform initial infected density.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fdm import solve_fdm
from .model import (
    COMPARTMENTS,
    GridSpec,
    ModelParams,
    SimulationRun,
    StateField,
    StatePoint,
)


def bump(x: np.ndarray, a: float, b: float, c: float, power: int = 4) -> np.ndarray:
    """Localized source term a * exp(-(x - b)^power / c)."""
    return a * np.exp(-((x - b) ** power) / c)


@dataclass(frozen=True)
class Cap:
    """One quartic-exponent source bump: amplitude, center, width."""

    a: float
    b: float
    c: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return bump(x, self.a, self.b, self.c, power=4)


@dataclass(frozen=True)
class SourceConfig:
    """Inverse-problem unknowns: 3 caps for s, 3 caps for e, and i0."""

    s_caps: tuple[Cap, Cap, Cap]
    e_caps: tuple[Cap, Cap, Cap]
    i0: float

    def __post_init__(self):
        for cap in (*self.s_caps, *self.e_caps):
            if cap.a < 0:
                raise ValueError("cap amplitudes must be >= 0")
            if not 0.0 <= cap.b <= 1.0:
                raise ValueError("cap centers must lie in [0, 1]")
            if not cap.c > 0:
                raise ValueError("cap widths must be > 0")
        if self.i0 < 0:
            raise ValueError("i0 must be >= 0")

    def to_vector(self) -> np.ndarray:
        """Flatten to the 19-vector (s caps, e caps, i0) in coordinate order."""
        parts = []
        for cap in (*self.s_caps, *self.e_caps):
            parts.extend((cap.a, cap.b, cap.c))
        parts.append(self.i0)
        return np.array(parts)

    @classmethod
    def from_vector(cls, vec) -> "SourceConfig":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (19,):
            raise ValueError(f"expected 19 source coordinates, got shape {vec.shape}")
        caps = [Cap(*vec[3 * k : 3 * k + 3]) for k in range(6)]
        return cls(s_caps=tuple(caps[:3]), e_caps=tuple(caps[3:]), i0=float(vec[18]))


#: Coordinate names matching SourceConfig.to_vector order.
SOURCE_COORDS = tuple(
    f"{comp}{idx}.{letter}" for comp in ("s", "e") for idx in (1, 2, 3) for letter in ("a", "b", "c")
) + ("i0",)


@dataclass
class ObservationSeries:
    """Per-day case counts; H and R are optional extras for history matching."""

    days: np.ndarray
    I: np.ndarray
    C: np.ndarray
    D: np.ndarray
    H: np.ndarray | None = None
    R: np.ndarray | None = None

    def __post_init__(self):
        self.days = np.asarray(self.days, dtype=float)
        for name in ("I", "C", "D", "H", "R"):
            values = getattr(self, name)
            if values is not None:
                values = np.asarray(values, dtype=float)
                setattr(self, name, values)
                if values.shape != self.days.shape:
                    raise ValueError(f"{name} length does not match days")
                if np.any(values < 0):
                    raise ValueError(f"{name} contains negative counts")
        if self.days.size and np.any(np.diff(self.days) <= 0):
            raise ValueError("days must be strictly increasing")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["day", "I", "C", "D"]
            cols = [self.days, self.I, self.C, self.D]
            if self.H is not None:
                header.append("H")
                cols.append(self.H)
            if self.R is not None:
                header.append("R")
                cols.append(self.R)
            writer.writerow(header)
            for row in zip(*cols):
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "ObservationSeries":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            data = {name: [] for name in header}
            for row in reader:
                for name, value in zip(header, row):
                    data[name].append(float(value))
        required = {"day", "I", "C", "D"}
        missing = required - set(header)
        if missing:
            raise ValueError(f"observation file {path} lacks columns: {sorted(missing)}")
        return cls(
            days=np.array(data["day"]),
            I=np.array(data["I"]),
            C=np.array(data["C"]),
            D=np.array(data["D"]),
            H=np.array(data["H"]) if "H" in data else None,
            R=np.array(data["R"]) if "R" in data else None,
        )


def eval_initial_field(src: SourceConfig, grid: GridSpec, fixed: StatePoint) -> StateField:
    """Build the initial field from a source configuration.

    s and e are sums of their three caps, i is the uniform i0, and r, h, c,
    d take the constant densities from ``fixed``.
    """
    x = grid.x()
    values = np.empty((7, x.size))
    values[0] = sum(cap(x) for cap in src.s_caps)
    values[1] = sum(cap(x) for cap in src.e_caps)
    values[2] = src.i0
    values[3] = fixed.r
    values[4] = fixed.h
    values[5] = fixed.c
    values[6] = fixed.d
    return StateField(x, values)


def extract_observables(
    traj: SimulationRun, p: ModelParams, days: list[float] | np.ndarray
) -> ObservationSeries:
    """Daily counts X_k = N * trapezoid(x_density(., t_k)) for each compartment."""
    days = np.asarray(days, dtype=float)
    counts = {name: np.empty(days.size) for name in ("I", "C", "D", "H", "R")}
    comp_rows = {"I": 2, "C": 5, "D": 6, "H": 4, "R": 3}
    for k, day in enumerate(days):
        idx = np.flatnonzero(np.isclose(traj.snapshot_times, day))
        if idx.size == 0:
            raise KeyError(f"trajectory has no snapshot for day {day:g}")
        values = traj.snapshots[int(idx[0])]
        for name, row in comp_rows.items():
            counts[name][k] = p.population * np.trapezoid(values[row], traj.init.x)
    return ObservationSeries(days=days, **counts)


def misfit(
    q: SourceConfig,
    data: ObservationSeries,
    p: ModelParams,
    grid: GridSpec,
    fixed: StatePoint,
) -> float:
    """Quadratic data misfit J(q) summed over I, C, and D series.

    Runs the finite-difference forward model from the initial field implied
    by ``q`` and accumulates squared day-by-day differences.
    """
    init = eval_initial_field(q, grid, fixed)
    run = solve_fdm(p, init, grid)
    predicted = extract_observables(run, p, data.days)
    return float(
        np.sum((predicted.I - data.I) ** 2)
        + np.sum((predicted.C - data.C) ** 2)
        + np.sum((predicted.D - data.D) ** 2)
    )


def synthesize_data(
    q_true: SourceConfig,
    p: ModelParams,
    grid: GridSpec,
    fixed: StatePoint,
    days: list[float] | np.ndarray,
    noise_rel: float = 0.0,
    seed: int | None = None,
) -> ObservationSeries:
    """Forward observables with multiplicative Gaussian noise, clipped at zero.

    Each count becomes count * (1 + noise_rel * xi) with iid standard normal
    xi; a fixed seed reproduces the series exactly.
    """
    if noise_rel < 0:
        raise ValueError("noise_rel must be >= 0")
    init = eval_initial_field(q_true, grid, fixed)
    run = solve_fdm(p, init, grid)
    clean = extract_observables(run, p, days)
    if noise_rel == 0.0:
        return clean
    rng = np.random.default_rng(seed)
    noisy = {}
    for name in ("I", "C", "D", "H", "R"):
        values = getattr(clean, name)
        xi = rng.standard_normal(values.size)
        noisy[name] = np.clip(values * (1.0 + noise_rel * xi), 0.0, None)
    return ObservationSeries(days=clean.days, **noisy)


def export_trajectory_csv(run: SimulationRun, path) -> None:
    """Long-format trajectory CSV with columns t, x, s..d, solver."""
    x = run.init.x
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", *COMPARTMENTS, "solver"])
        for t, values in zip(run.snapshot_times, run.snapshots):
            for k in range(x.size):
                writer.writerow(
                    [repr(float(t)), repr(float(x[k]))]
                    + [repr(float(values[c, k])) for c in range(7)]
                    + [run.solver]
                )
