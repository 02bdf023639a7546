"""Regression + Gaussian-process surrogate and history matching.

The identifiability pipeline builds a Latin-hypercube design over the
parameter box, runs the simulator once per design point, fits a cheap
surrogate (polynomial trend plus a GP on the residuals with an exponential
correlation function), and rules out parameter-space regions whose
emulated outputs sit implausibly far from the observed values.  The
surviving candidates from all observables are intersected.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy.optimize import minimize
from scipy.stats import qmc

from .forward import simulate_batch
from .model import StateField
from .observe import ObservationSeries
from .sobol import ParameterBounds

_OBS_ROW = {"I": 2, "C": 5, "D": 6, "H": 4, "R": 3}


@dataclass
class LhcDesign:
    """Latin-hypercube design: one point per stratum in every dimension."""

    points: np.ndarray  # (n, k) in the bounds box
    bounds: ParameterBounds
    seed: int


@dataclass
class EmulatorModel:
    """Polynomial trend plus GP residual model on [0,1]-standardized inputs."""

    bounds: ParameterBounds
    degree: int
    powers: np.ndarray  # (n_basis, k) monomial exponents
    beta: np.ndarray  # regression coefficients
    sigma2: float  # GP variance
    delta: np.ndarray  # correlation lengths per input, standardized scale
    x01: np.ndarray  # (n, k) design, standardized
    residuals: np.ndarray  # (n,) training residuals
    chol: np.ndarray  # Cholesky factor of R + jitter I
    alpha: np.ndarray  # (R + jitter I)^-1 residuals
    jitter: float


@dataclass
class PlausibleSpace:
    """Candidates not ruled out by any observable, with refined bounds."""

    accepted: np.ndarray  # (m, k)
    bounds: ParameterBounds
    threshold: float
    n_candidates: int
    quantiles: dict  # name -> {"q25","q50","q75","min","max"}
    diagnostics: dict  # observable -> {"max_I","min_I"}

    @property
    def is_empty(self) -> bool:
        return self.accepted.shape[0] == 0

    def refined_bounds(self) -> dict:
        return self.quantiles


def lhc_sample(bounds: ParameterBounds, n: int = 250, seed: int = 0) -> LhcDesign:
    """Stratified uniform design with exactly one point per stratum per axis."""
    sampler = qmc.LatinHypercube(d=bounds.k, seed=seed)
    unit = sampler.random(n)
    return LhcDesign(points=bounds.scale01(unit), bounds=bounds, seed=seed)


def evaluate_design(
    design: LhcDesign,
    init: StateField,
    population: float,
    day: float,
    observables=("H", "R", "D"),
    max_steps_per_day: int = 512,
) -> dict:
    """Run the simulator at every design point; returns per-observable outputs.

    Failed rows keep NaN outputs; callers decide whether to drop or refuse.
    """
    nx = init.x.size - 1
    result = simulate_batch(
        init.values,
        design.points,
        nx,
        float(day),
        np.array([float(day)]),
        population,
        max_steps_per_day=max_steps_per_day,
    )
    return {name: result.counts[:, 0, _OBS_ROW[name]] for name in observables}


def _monomial_powers(k: int, degree: int) -> np.ndarray:
    powers = [np.zeros(k, dtype=int)]
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(k), deg):
            row = np.zeros(k, dtype=int)
            for idx in combo:
                row[idx] += 1
            powers.append(row)
    return np.array(powers)


def _basis(x01: np.ndarray, powers: np.ndarray) -> np.ndarray:
    # (n, n_basis): products of coordinate powers.
    return np.prod(x01[:, None, :] ** powers[None, :, :], axis=2)


def _correlation(x01: np.ndarray, delta: np.ndarray, y01: np.ndarray | None = None) -> np.ndarray:
    xs = x01 / delta
    ys = xs if y01 is None else y01 / delta
    sq = (
        np.sum(xs**2, axis=1)[:, None]
        + np.sum(ys**2, axis=1)[None, :]
        - 2.0 * xs @ ys.T
    )
    return np.exp(-np.maximum(sq, 0.0))


def _chol_with_jitter(R: np.ndarray, jitter: float = 1e-10):
    n = R.shape[0]
    while jitter <= 1e-2:
        try:
            L = np.linalg.cholesky(R + jitter * np.eye(n))
            return L, jitter
        except np.linalg.LinAlgError:
            jitter *= 100.0
    raise np.linalg.LinAlgError("correlation matrix not factorizable even with jitter")


def fit_emulator(
    design: LhcDesign,
    y: np.ndarray,
    degree: int = 1,
    n_restarts: int = 5,
    delta_bounds: tuple[float, float] = (0.05, 10.0),
    seed: int = 0,
) -> EmulatorModel:
    """Least-squares trend plus maximum-likelihood GP on the residuals.

    Correlation lengths are optimized on a log scale with a bounded
    quasi-Newton method from ``n_restarts`` starting points; the GP variance
    is profiled out in closed form.
    """
    y = np.asarray(y, dtype=float)
    n = design.points.shape[0]
    if y.shape != (n,):
        raise ValueError(f"y must have one output per design point, got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite simulator outputs")

    x01 = design.bounds.to01(design.points)
    k = x01.shape[1]

    powers = _monomial_powers(k, degree)
    H = _basis(x01, powers)
    while degree > 0 and np.linalg.matrix_rank(H) < H.shape[1]:
        warnings.warn(f"singular basis at degree {degree}; reducing to {degree - 1}")
        degree -= 1
        powers = _monomial_powers(k, degree)
        H = _basis(x01, powers)
    beta, *_ = np.linalg.lstsq(H, y, rcond=None)
    resid = y - H @ beta

    sigma_floor = 1e-12 * (1.0 + float(np.mean(y**2)))

    log_lo, log_hi = math.log(delta_bounds[0]), math.log(delta_bounds[1])

    def nll(log_delta: np.ndarray) -> float:
        delta = np.exp(log_delta)
        R = _correlation(x01, delta)
        try:
            L, _ = _chol_with_jitter(R)
        except np.linalg.LinAlgError:
            return 1e300
        z = sla.solve_triangular(L, resid, lower=True)
        quad = float(z @ z)
        sigma2 = max(quad / n, sigma_floor)
        return n * math.log(sigma2) + 2.0 * float(np.sum(np.log(np.diag(L))))

    rng = np.random.default_rng(seed)
    starts = [np.full(k, math.log(1.0))]
    for _ in range(max(n_restarts - 1, 0)):
        starts.append(rng.uniform(log_lo, log_hi, size=k))

    best = None
    for start in starts:
        try:
            out = minimize(
                nll,
                start,
                method="L-BFGS-B",
                bounds=[(log_lo, log_hi)] * k,
            )
        except Exception:
            continue
        if np.isfinite(out.fun) and (best is None or out.fun < best.fun):
            best = out
    if best is None:
        raise RuntimeError("GP likelihood optimization failed at every start")

    delta = np.exp(best.x)
    R = _correlation(x01, delta)
    L, jitter = _chol_with_jitter(R)
    z = sla.solve_triangular(L, resid, lower=True)
    sigma2 = max(float(z @ z) / n, sigma_floor)
    alpha = sla.cho_solve((L, True), resid)

    return EmulatorModel(
        bounds=design.bounds,
        degree=degree,
        powers=powers,
        beta=beta,
        sigma2=sigma2,
        delta=delta,
        x01=x01,
        residuals=resid,
        chol=L,
        alpha=alpha,
        jitter=jitter,
    )


def predict_batch(model: EmulatorModel, q: np.ndarray):
    """GP posterior mean and variance at query points (rows in the bounds box)."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    q01 = model.bounds.to01(q)
    if np.any(q01 < -1e-9) or np.any(q01 > 1 + 1e-9):
        warnings.warn("predicting outside the emulator's bounds box (extrapolation)")
    H = _basis(q01, model.powers)
    K = _correlation(q01, model.delta, model.x01)  # (m, n)
    mean = H @ model.beta + K @ model.alpha
    W = sla.cho_solve((model.chol, True), K.T)  # (n, m)
    qform = np.einsum("mn,nm->m", K, W)
    var = model.sigma2 * np.maximum(1.0 + model.jitter - qform, 0.0)
    return mean, var


def predict(model: EmulatorModel, q: np.ndarray):
    """Posterior mean/variance at a single point."""
    mean, var = predict_batch(model, np.asarray(q, dtype=float)[None, :])
    return float(mean[0]), float(var[0])


def loo_standardized_errors(model: EmulatorModel) -> np.ndarray:
    """Leave-one-out standardized prediction errors from the precision matrix."""
    n = model.x01.shape[0]
    cinv = sla.cho_solve((model.chol, True), np.eye(n))
    diag = np.diag(cinv)
    errors = model.alpha / diag
    variances = model.sigma2 / diag
    return errors / np.sqrt(variances)


def implausibility(model: EmulatorModel, q: np.ndarray, z: float, var_obs: float) -> float:
    """Standardized distance |z - mean| / sqrt(gp variance + observation variance)."""
    if var_obs < 0:
        raise ValueError("var_obs must be >= 0")
    mean, var = predict(model, q)
    denom = math.sqrt(var + var_obs)
    if denom == 0.0:
        raise ZeroDivisionError("degenerate denominator")
    return abs(z - mean) / denom


def _implausibility_batch(model: EmulatorModel, q: np.ndarray, z: float, var_obs: float):
    mean, var = predict_batch(model, q)
    denom = np.sqrt(var + var_obs)
    if np.any(denom == 0.0):
        raise ZeroDivisionError("degenerate denominator")
    return np.abs(z - mean) / denom


def history_match(
    models: dict[str, EmulatorModel],
    data: ObservationSeries,
    bounds: ParameterBounds,
    n_candidates: int = 50_000,
    threshold: float = 3.0,
    seed: int = 0,
    var_obs_rel: float = 0.1,
    day: float | None = None,
    chunk: int = 10_000,
) -> PlausibleSpace:
    """Keep the uniform candidates that are plausible under every observable.

    The observed scalar for each emulator comes from the matching series at
    ``day`` (default: the final observed day); its variance defaults to
    (var_obs_rel * z)^2.  A candidate survives only if the implausibility is
    below the threshold for all observables (the spaces are intersected).
    """
    if day is None:
        day = float(data.days[-1])
    day_idx = np.flatnonzero(np.isclose(data.days, day))
    if day_idx.size == 0:
        raise KeyError(f"observations have no entry for day {day:g}")
    day_idx = int(day_idx[0])

    targets = {}
    for name in models:
        series = getattr(data, name, None)
        if series is None:
            raise ValueError(f"observation series lacks values for {name!r}")
        z = float(series[day_idx])
        targets[name] = (z, (var_obs_rel * z) ** 2)

    rng = np.random.default_rng(seed)
    candidates = bounds.scale01(rng.random((n_candidates, bounds.k)))

    keep = np.ones(n_candidates, dtype=bool)
    diagnostics = {name: {"max_I": 0.0, "min_I": math.inf} for name in models}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        for start in range(0, n_candidates, chunk):
            block = candidates[start : start + chunk]
            for name, model in models.items():
                z, var_obs = targets[name]
                imp = _implausibility_batch(model, block, z, var_obs)
                diagnostics[name]["max_I"] = max(diagnostics[name]["max_I"], float(imp.max()))
                diagnostics[name]["min_I"] = min(diagnostics[name]["min_I"], float(imp.min()))
                keep[start : start + chunk] &= imp < threshold

    accepted = candidates[keep]
    quantiles = {}
    for j, name in enumerate(bounds.names):
        if accepted.shape[0]:
            q25, q50, q75 = np.percentile(accepted[:, j], [25, 50, 75])
            quantiles[name] = {
                "q25": float(q25),
                "q50": float(q50),
                "q75": float(q75),
                "min": float(accepted[:, j].min()),
                "max": float(accepted[:, j].max()),
            }
        else:
            quantiles[name] = {"q25": math.nan, "q50": math.nan, "q75": math.nan,
                               "min": math.nan, "max": math.nan}
    return PlausibleSpace(
        accepted=accepted,
        bounds=bounds,
        threshold=threshold,
        n_candidates=n_candidates,
        quantiles=quantiles,
        diagnostics=diagnostics,
    )
