"""Variance-based first-order sensitivity analysis over time slices.

Builds the radial Saltelli design on a low-discrepancy sequence, evaluates
the forward model once per parameter row, and estimates first-order
indices for each requested day with percentile-bootstrap confidence
half-widths.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .forward import simulate_batch
from .model import PARAM_NAMES, StateField

#: Parameter variation box used for the identifiability studies.
DEFAULT_BOUNDS_TABLE = {
    "alpha_i": (0.0, 38.9),
    "alpha_e": (0.0, 9.3),
    "t_inc": (0.0, 505.0),
    "t_inf": (0.0, 808.0),
    "beta": (0.0, 40.4),
    "eps_hc": (0.0, 3.8),
    "t_hosp": (0.0, 707.0),
    "t_imm": (0.0, 17675.0),
    "mu": (0.0, 48.0),
    "t_crit": (0.0, 909.0),
    "v_s": (0.0, 0.005),
    "v_e": (0.0, 0.101),
    "v_i": (0.0, 0.001),
    "v_r": (0.0, 0.005),
}

_OUTPUT_ROW = {"S": 0, "E": 1, "I": 2, "R": 3, "H": 4, "C": 5, "D": 6}


@dataclass(frozen=True)
class ParameterBounds:
    """Named per-parameter variation intervals."""

    names: tuple[str, ...]
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if not (len(self.names) == self.lo.size == self.hi.size):
            raise ValueError("names, lo, hi must have equal length")
        if not np.all(self.lo < self.hi):
            raise ValueError("bounds must satisfy lo < hi componentwise")

    @property
    def k(self) -> int:
        return len(self.names)

    @classmethod
    def default(cls) -> "ParameterBounds":
        lo, hi = zip(*(DEFAULT_BOUNDS_TABLE[name] for name in PARAM_NAMES))
        return cls(names=PARAM_NAMES, lo=np.array(lo), hi=np.array(hi))

    def scale01(self, unit: np.ndarray) -> np.ndarray:
        return self.lo + unit * (self.hi - self.lo)

    def to01(self, points: np.ndarray) -> np.ndarray:
        return (points - self.lo) / (self.hi - self.lo)


@dataclass
class SensitivityResult:
    """First-order indices for one time slice with bootstrap half-widths."""

    day: float
    names: tuple[str, ...]
    S: np.ndarray
    ci: np.ndarray
    n_samples: int


def saltelli_sample(bounds: ParameterBounds, N: int, seed: int = 0) -> np.ndarray:
    """Radial Saltelli design: N*(k+2) rows ordered [A; B; AB_1 .. AB_k].

    A and B come from a scrambled Sobol sequence of dimension 2k; AB_i is A
    with column i replaced from B.  Powers of two for N keep the sequence
    balanced (a warning is emitted otherwise).
    """
    k = bounds.k
    if N < 1:
        raise ValueError("N must be positive")
    if N & (N - 1):
        warnings.warn(f"base sample N={N} is not a power of two; Sobol balance suffers")
    sampler = qmc.Sobol(d=2 * k, scramble=True, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        unit = sampler.random(N)
    a = bounds.scale01(unit[:, :k])
    b = bounds.scale01(unit[:, k:])
    blocks = [a, b]
    for i in range(k):
        ab = a.copy()
        ab[:, i] = b[:, i]
        blocks.append(ab)
    return np.vstack(blocks)


def _split_sections(Y: np.ndarray, k: int, N: int):
    if Y.size != N * (k + 2):
        raise ValueError(f"expected {N * (k + 2)} outputs, got {Y.size}")
    ya = Y[:N]
    yb = Y[N : 2 * N]
    yab = Y[2 * N :].reshape(k, N)
    return ya, yb, yab


def _estimate(ya, yb, yab):
    base = np.concatenate([ya, yb])
    v = base.var()
    if v == 0.0:
        raise ValueError("constant output")
    return (yb * (yab - ya)).mean(axis=1) / v


def first_order_indices(
    Y: np.ndarray,
    k: int,
    N: int,
    day: float = 0.0,
    names: tuple[str, ...] | None = None,
    n_boot: int = 100,
    seed: int = 0,
) -> SensitivityResult:
    """Saltelli first-order estimator over the (A, B, AB_i) blocks.

    The half-widths are 95% percentile-bootstrap intervals over resampled
    base rows.
    """
    Y = np.asarray(Y, dtype=float)
    if not np.all(np.isfinite(Y)):
        raise ValueError("outputs contain non-finite values")
    ya, yb, yab = _split_sections(Y, k, N)
    s = _estimate(ya, yb, yab)

    rng = np.random.default_rng(seed)
    boot = np.empty((n_boot, k))
    for m in range(n_boot):
        idx = rng.integers(0, N, size=N)
        boot[m] = _estimate(ya[idx], yb[idx], yab[:, idx])
    lo, hi = np.percentile(boot, [2.5, 97.5], axis=0)
    ci = (hi - lo) / 2.0
    if names is None:
        names = tuple(f"q{i + 1}" for i in range(k))
    return SensitivityResult(day=day, names=names, S=s, ci=ci, n_samples=N)


def analyze_timeslices(
    bounds: ParameterBounds,
    init: StateField,
    population: float,
    days=(40.0, 80.0, 120.0, 160.0, 200.0),
    output: str = "I",
    N: int = 512,
    seed: int = 0,
    n_boot: int = 100,
    max_failure_fraction: float = 0.01,
    max_steps_per_day: int = 512,
) -> list[SensitivityResult]:
    """First-order indices of the chosen observable at each requested day.

    One forward run per parameter row supplies every time slice.  Rows that
    produce non-finite output have their whole radial block resampled once
    from spare design points; the analysis aborts if more than
    ``max_failure_fraction`` of rows still fail.
    """
    if output not in _OUTPUT_ROW:
        raise ValueError(f"unknown output {output!r}; choose from {sorted(_OUTPUT_ROW)}")
    days = np.asarray(days, dtype=float)
    k = bounds.k
    if bounds.names != tuple(PARAM_NAMES):
        raise ValueError("timeslice analysis requires the 14 canonical model parameters")

    n_spare = max(8, N // 16)
    rows_all = saltelli_sample(bounds, N + n_spare, seed=seed)
    sections = np.arange(k + 2)

    def block_rows(base_idx: np.ndarray) -> np.ndarray:
        # Rows of every section for the given base-sample indices.
        idx = (sections[:, None] * (N + n_spare) + base_idx[None, :]).ravel()
        return rows_all[idx]

    active = np.arange(N)
    spares = list(range(N, N + n_spare))

    t_end = float(days.max())
    nx = init.x.size - 1

    def run(base_idx: np.ndarray) -> np.ndarray:
        rows = block_rows(base_idx)
        result = simulate_batch(
            init.values,
            rows,
            nx,
            t_end,
            days,
            population,
            max_steps_per_day=max_steps_per_day,
        )
        comp = _OUTPUT_ROW[output]
        out = result.counts[:, :, comp].reshape(k + 2, base_idx.size, days.size)
        return out

    outputs = run(active)  # (k+2, N, n_days)
    bad_blocks = np.flatnonzero(~np.isfinite(outputs).all(axis=(0, 2)))
    if bad_blocks.size:
        replacements = []
        for b in bad_blocks:
            if spares:
                replacements.append(spares.pop(0))
        if replacements:
            repl_idx = np.array(replacements)
            repl_out = run(repl_idx)
            ok = np.isfinite(repl_out).all(axis=(0, 2))
            for slot, b in enumerate(bad_blocks[: repl_idx.size]):
                if ok[slot]:
                    outputs[:, b, :] = repl_out[:, slot, :]
        still_bad = np.flatnonzero(~np.isfinite(outputs).all(axis=(0, 2)))
        if still_bad.size * (k + 2) > max_failure_fraction * N * (k + 2):
            raise RuntimeError(
                f"{still_bad.size * (k + 2)} of {N * (k + 2)} forward runs failed "
                "after resampling; aborting"
            )
        if still_bad.size:
            keep = np.setdiff1d(np.arange(N), still_bad)
            outputs = outputs[:, keep, :]

    n_eff = outputs.shape[1]
    results = []
    rng = np.random.default_rng(seed)
    for j, day in enumerate(days):
        y = outputs[:, :, j].reshape(-1)
        results.append(
            first_order_indices(
                y,
                k,
                n_eff,
                day=float(day),
                names=bounds.names,
                n_boot=n_boot,
                seed=int(rng.integers(2**31)),
            )
        )
    return results
