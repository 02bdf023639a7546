"""Command-line entry point: simulate, synth, sensitivity, emulate, invert.

Every subcommand reads a TOML/JSON config, writes its outputs plus a
run manifest into --output-dir, and derives all randomness from a single
--seed.  Exit codes: 0 success, 2 config error, 3 numerical failure,
4 empty plausible space.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .emulator import (
    evaluate_design,
    fit_emulator,
    history_match,
    lhc_sample,
)
from .fdm import solve_fdm
from .fem import solve_fem
from .forward import params_row, simulate_batch
from .model import PARAM_NAMES, BetaSchedule, GridSpec, StateField
from .observe import (
    ObservationSeries,
    SOURCE_COORDS,
    SourceConfig,
    eval_initial_field,
    export_trajectory_csv,
    extract_observables,
    synthesize_data,
)
from .scenario import (
    ConfigError,
    Scenario,
    load_scenario,
    load_source_config,
    save_source_config,
)
from .sobol import ParameterBounds, analyze_timeslices
from .ttopt import TTConfig, tt_optimize

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_EMPTY_SPACE = 4


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def _write_manifest(out_dir: Path, subcommand: str, config: Path, seed: int,
                    inputs: list[Path], started: float) -> None:
    manifest = {
        "subcommand": subcommand,
        "config": str(config),
        "seed": seed,
        "output_dir": str(out_dir),
        "version": __version__,
        "wall_clock_s": round(time.time() - started, 3),
        "inputs": {str(p): _sha256(p) for p in sorted(set(map(Path, inputs)))},
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _load_pipeline_config(path: Path, section: str, allowed: set) -> tuple[dict, list[Path]]:
    from .scenario import _load_raw, _reject_unknown, _require  # shared schema helpers

    try:
        raw = _load_raw(path)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except Exception as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    _reject_unknown(raw, {section}, "config")
    table = _require(raw, section, "config")
    _reject_unknown(table, allowed, section)
    return table, [path]


def _resolve_scenario(table: dict, section: str, base: Path) -> tuple[Scenario, list[Path]]:
    if "scenario" not in table:
        raise ConfigError(f"missing required field '{section}.scenario'")
    scenario_path = base / table["scenario"]
    scenario = load_scenario(scenario_path)
    return scenario, [scenario_path]


def _bounds_from_table(table: dict | None) -> ParameterBounds:
    bounds = ParameterBounds.default()
    if not table:
        return bounds
    lo = bounds.lo.copy()
    hi = bounds.hi.copy()
    for name, pair in table.items():
        if name not in PARAM_NAMES:
            raise ConfigError(f"unknown parameter in bounds: {name!r}")
        idx = PARAM_NAMES.index(name)
        lo[idx], hi[idx] = float(pair[0]), float(pair[1])
    return ParameterBounds(names=bounds.names, lo=lo, hi=hi)


def _coarse_initial(scenario: Scenario, nx: int) -> StateField:
    grid = GridSpec(nx=nx, nt=1, t_end=scenario.grid.t_end)
    return scenario.initial_field(grid)


def _days_from(value) -> np.ndarray:
    if isinstance(value, (int, float)):
        return np.arange(1.0, float(value) + 0.5)
    return np.asarray([float(v) for v in value])


# --------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    started = time.time()
    scenario = load_scenario(args.config)
    inputs = [Path(args.config)]
    if scenario.path and scenario.path != Path(args.config):
        inputs.append(scenario.path)
    solver = solve_fem if args.solver == "fem" else solve_fdm

    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    run = solver(scenario.params, scenario.initial_field(), scenario.grid)
    export_trajectory_csv(run, out_dir / "trajectory.csv")

    days = np.arange(0.0, scenario.grid.t_end + 0.5)
    obs = extract_observables(run, scenario.params, days)
    obs.to_csv(out_dir / "observations.csv")

    peak_idx = int(np.argmax(obs.I))
    summary = {
        "solver": run.solver,
        "clamp_count": run.clamp_count,
        "peak_day_I": float(days[peak_idx]),
        "peak_I": float(obs.I[peak_idx]),
        "final_I": float(obs.I[-1]),
        "final_D": float(obs.D[-1]),
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    _write_manifest(out_dir, "simulate", Path(args.config), args.seed, inputs, started)
    return EXIT_OK


# --------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    started = time.time()
    config = Path(args.config)
    table, inputs = _load_pipeline_config(
        config, "synth", {"scenario", "source", "days", "noise_rel"}
    )
    scenario, extra = _resolve_scenario(table, "synth", config.parent)
    inputs += extra
    if "source" in table:
        source_path = config.parent / table["source"]
        q_true = load_source_config(source_path)
        inputs.append(source_path)
    elif scenario.initial.source is not None:
        q_true = scenario.initial.source
    else:
        raise ConfigError("synth needs a 'source' file or a source-kind scenario")
    days = _days_from(table.get("days", scenario.grid.t_end))
    noise_rel = float(table.get("noise_rel", 0.0))

    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    clean = synthesize_data(
        q_true, scenario.params, scenario.grid, scenario.fixed_point(), days, 0.0
    )
    if noise_rel > 0.0:
        series = synthesize_data(
            q_true, scenario.params, scenario.grid, scenario.fixed_point(),
            days, noise_rel, seed=args.seed,
        )
    else:
        series = clean
    series.to_csv(out_dir / "observations.csv")

    noise_floor = float(
        np.sum((series.I - clean.I) ** 2)
        + np.sum((series.C - clean.C) ** 2)
        + np.sum((series.D - clean.D) ** 2)
    )
    summary = {
        "noise_rel": noise_rel,
        "n_days": int(days.size),
        "sum_sq_data": float(np.sum(series.I**2) + np.sum(series.C**2) + np.sum(series.D**2)),
        "noise_floor": noise_floor,
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    _write_manifest(out_dir, "synth", config, args.seed, inputs, started)
    return EXIT_OK


# --------------------------------------------------------------------------
# sensitivity


def cmd_sensitivity(args) -> int:
    started = time.time()
    config = Path(args.config)
    table, inputs = _load_pipeline_config(
        config,
        "sensitivity",
        {"scenario", "samples", "days", "output", "nx", "bounds", "bootstrap"},
    )
    scenario, extra = _resolve_scenario(table, "sensitivity", config.parent)
    inputs += extra
    bounds = _bounds_from_table(table.get("bounds"))
    n_samples = int(args.samples or table.get("samples", 512))
    days = _days_from(table.get("days", [40, 80, 120, 160, 200]))
    output = args.output or table.get("output", "I")
    nx = int(table.get("nx", 20))
    n_boot = int(table.get("bootstrap", 100))

    init = _coarse_initial(scenario, nx)
    results = analyze_timeslices(
        bounds,
        init,
        scenario.params.population,
        days=days,
        output=output,
        N=n_samples,
        seed=args.seed,
        n_boot=n_boot,
    )

    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "indices.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "parameter", "S", "ci_lo", "ci_hi"])
        for res in results:
            for name, s, ci in zip(res.names, res.S, res.ci):
                writer.writerow(
                    [repr(float(res.day)), name, repr(float(s)),
                     repr(float(s - ci)), repr(float(s + ci))]
                )
    if not args.no_plot:
        _barchart_svg(results, out_dir / "indices.svg", output)
    _write_manifest(out_dir, "sensitivity", config, args.seed, inputs, started)
    return EXIT_OK


def _barchart_svg(results, path: Path, output: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(
        len(results), 1, figsize=(8, 2.2 * len(results)), sharex=True, squeeze=False
    )
    for ax, res in zip(axes[:, 0], results):
        pos = np.arange(len(res.names))
        ax.bar(pos, res.S, color="firebrick")
        ax.errorbar(pos, res.S, yerr=res.ci, fmt="none", ecolor="black", capsize=2)
        ax.set_ylabel(f"day {res.day:g}")
        ax.set_xticks(pos)
        ax.set_xticklabels(res.names, rotation=60, fontsize=7)
    axes[0, 0].set_title(f"first-order sensitivity of {output}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# --------------------------------------------------------------------------
# emulate


def cmd_emulate(args) -> int:
    started = time.time()
    config = Path(args.config)
    table, inputs = _load_pipeline_config(
        config,
        "emulate",
        {
            "scenario", "data", "design_points", "candidates", "threshold",
            "day", "var_obs_rel", "degree", "nx", "observables", "bounds",
            "restarts",
        },
    )
    scenario, extra = _resolve_scenario(table, "emulate", config.parent)
    inputs += extra
    data_path = config.parent / table["data"] if "data" in table else None
    if data_path is None:
        raise ConfigError("missing required field 'emulate.data'")
    data = ObservationSeries.from_csv(data_path)
    inputs.append(data_path)

    bounds = _bounds_from_table(table.get("bounds"))
    n_design = int(table.get("design_points", 250))
    n_candidates = int(table.get("candidates", 50_000))
    threshold = float(args.threshold or table.get("threshold", 3.0))
    day = float(table["day"]) if "day" in table else float(data.days[-1])
    var_obs_rel = float(table.get("var_obs_rel", 0.1))
    degree = int(table.get("degree", 1))
    nx = int(table.get("nx", 20))
    observables = tuple(table.get("observables", ["H", "R", "D"]))
    restarts = int(table.get("restarts", 5))

    init = _coarse_initial(scenario, nx)
    design = lhc_sample(bounds, n=n_design, seed=args.seed)
    outputs = evaluate_design(design, init, scenario.params.population, day, observables)

    finite = np.ones(n_design, dtype=bool)
    for name in observables:
        finite &= np.isfinite(outputs[name])
    if finite.sum() < n_design:
        design.points = design.points[finite]
        outputs = {name: outputs[name][finite] for name in observables}

    models = {}
    for j, name in enumerate(observables):
        models[name] = fit_emulator(
            design, outputs[name], degree=degree, n_restarts=restarts, seed=args.seed + j
        )

    space = history_match(
        models, data, bounds,
        n_candidates=n_candidates, threshold=threshold,
        seed=args.seed, var_obs_rel=var_obs_rel, day=day,
    )

    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "accepted.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(bounds.names)
        for row in space.accepted:
            writer.writerow([repr(float(v)) for v in row])
    with open(out_dir / "quantiles.json", "w") as fh:
        json.dump(space.quantiles, fh, indent=2)
        fh.write("\n")
    refined = {
        name: {"lo": q["min"], "hi": q["max"]} for name, q in space.quantiles.items()
    }
    with open(out_dir / "refined_bounds.json", "w") as fh:
        json.dump(refined, fh, indent=2)
        fh.write("\n")
    _boxplot_export(space, out_dir, plot=not args.no_plot)
    _write_manifest(out_dir, "emulate", config, args.seed, inputs, started)

    if space.is_empty:
        print("plausible space is empty; diagnostics:", json.dumps(space.diagnostics))
        return EXIT_EMPTY_SPACE
    print(f"accepted {space.accepted.shape[0]} of {space.n_candidates} candidates")
    return EXIT_OK


def _boxplot_export(space, out_dir: Path, plot: bool) -> None:
    bounds = space.bounds
    with open(out_dir / "boxplot.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "q25", "q50", "q75", "min", "max", "lo_bound", "hi_bound"])
        for j, name in enumerate(bounds.names):
            q = space.quantiles[name]
            writer.writerow(
                [name] + [repr(float(q[key])) for key in ("q25", "q50", "q75", "min", "max")]
                + [repr(float(bounds.lo[j])), repr(float(bounds.hi[j]))]
            )
    if not plot or space.is_empty:
        return
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    norm = space.bounds.to01(space.accepted)
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.boxplot([norm[:, j] for j in range(norm.shape[1])],
               tick_labels=list(bounds.names), whis=(0, 100))
    ax.set_ylim(-0.02, 1.02)
    ax.set_ylabel("normalized range")
    plt.setp(ax.get_xticklabels(), rotation=60, fontsize=7)
    fig.tight_layout()
    fig.savefig(out_dir / "boxplot.svg")
    plt.close(fig)


# --------------------------------------------------------------------------
# invert


def _free_coordinate_spec(table: dict, scenario: Scenario, base: Path, inputs: list):
    if "template" in table:
        template_path = base / table["template"]
        template = load_source_config(template_path)
        inputs.append(template_path)
    elif scenario.initial.source is not None:
        template = scenario.initial.source
    else:
        raise ConfigError("invert needs a 'template' source file or a source-kind scenario")

    free = list(table.get("free", []))
    if not free:
        raise ConfigError("invert.free must list at least one coordinate")
    for name in free:
        if name not in SOURCE_COORDS and name not in PARAM_NAMES:
            raise ConfigError(f"unknown free coordinate {name!r}")

    bounds_tbl = table.get("bounds", {})
    refined = {}
    if "refined_bounds" in table:
        refined_path = base / table["refined_bounds"]
        with open(refined_path) as fh:
            refined = json.load(fh)
        inputs.append(refined_path)

    lo, hi = [], []
    for name in free:
        if name in refined:
            lo.append(float(refined[name]["lo"]))
            hi.append(float(refined[name]["hi"]))
        elif name in bounds_tbl:
            lo.append(float(bounds_tbl[name][0]))
            hi.append(float(bounds_tbl[name][1]))
        else:
            raise ConfigError(f"no bounds given for free coordinate {name!r}")
    return template, free, np.array(lo), np.array(hi)


def _batched_misfit(scenario: Scenario, data: ObservationSeries, template: SourceConfig,
                    free: list[str]):
    """Vectorized objective: candidate matrix -> misfit values."""
    params = scenario.params
    grid = scenario.grid
    steps_per_day = grid.nt / grid.t_end
    if abs(steps_per_day - round(steps_per_day)) > 1e-9:
        raise ConfigError("invert requires grid.nt divisible by grid.t_end")
    steps_per_day = int(round(steps_per_day))

    base_row = params_row(params)
    base_vec = template.to_vector()
    fixed = scenario.fixed_point()
    x = grid.x()
    free_src = [(j, SOURCE_COORDS.index(name)) for j, name in enumerate(free)
                if name in SOURCE_COORDS]
    free_par = [(j, PARAM_NAMES.index(name)) for j, name in enumerate(free)
                if name in PARAM_NAMES]
    beta_of_t = params.beta if isinstance(params.beta, BetaSchedule) else None
    if any(PARAM_NAMES[idx] == "beta" for _, idx in free_par):
        beta_of_t = None  # a freed beta is a plain constant per candidate

    def objective(points: np.ndarray) -> np.ndarray:
        m = points.shape[0]
        rows = np.tile(base_row, (m, 1))
        fields = np.empty((m, 7, x.size))
        for row_i in range(m):
            vec = base_vec.copy()
            for j, idx in free_src:
                vec[idx] = points[row_i, j]
            src = SourceConfig.from_vector(vec)
            fields[row_i] = eval_initial_field(src, grid, fixed).values
            for j, idx in free_par:
                rows[row_i, idx] = points[row_i, j]
        result = simulate_batch(
            fields, rows, grid.nx, grid.t_end, data.days,
            params.population, beta_of_t=beta_of_t,
            min_steps_per_day=steps_per_day, max_steps_per_day=steps_per_day,
        )
        counts = result.counts
        J = (
            np.sum((counts[:, :, 2] - data.I) ** 2, axis=1)
            + np.sum((counts[:, :, 5] - data.C) ** 2, axis=1)
            + np.sum((counts[:, :, 6] - data.D) ** 2, axis=1)
        )
        J[result.failed] = np.nan
        return J

    return objective


def cmd_invert(args) -> int:
    started = time.time()
    config = Path(args.config)
    table, inputs = _load_pipeline_config(
        config,
        "invert",
        {"scenario", "data", "template", "free", "bounds", "refined_bounds", "tt"},
    )
    scenario, extra = _resolve_scenario(table, "invert", config.parent)
    inputs += extra
    if "data" not in table:
        raise ConfigError("missing required field 'invert.data'")
    data_path = config.parent / table["data"]
    data = ObservationSeries.from_csv(data_path)
    inputs.append(data_path)

    template, free, lo, hi = _free_coordinate_spec(table, scenario, config.parent, inputs)
    tt_tbl = table.get("tt", {})
    cfg = TTConfig(
        b_min=lo,
        b_max=hi,
        n=int(tt_tbl.get("n", 33)),
        r_max=int(tt_tbl.get("r_max", 4)),
        n_sweeps=int(tt_tbl.get("n_sweeps", 6)),
        stall_sweeps=tt_tbl.get("stall_sweeps"),
        seed=args.seed,
    )

    objective = _batched_misfit(scenario, data, template, free)
    result = tt_optimize(objective, cfg)

    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    vec = template.to_vector()
    for j, name in enumerate(free):
        if name in SOURCE_COORDS:
            vec[SOURCE_COORDS.index(name)] = result.q_best[j]
    save_source_config(SourceConfig.from_vector(vec), out_dir / "recovered_source.json")

    report = {
        "free": free,
        "q_best": {name: float(v) for name, v in zip(free, result.q_best)},
        "j_best": result.j_best,
        "n_evaluations": result.n_evals,
        "grid_cells": {
            name: float((hi[j] - lo[j]) / (cfg.n - 1)) for j, name in enumerate(free)
        },
    }
    with open(out_dir / "fit_report.json", "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")

    with open(out_dir / "tt_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "dimension", "evaluations", "alpha", "j_best"])
        for entry in result.log:
            writer.writerow(
                [entry["iteration"], entry["dimension"], entry["evaluations"],
                 repr(float(entry["alpha"])), repr(float(entry["j_best"]))]
            )

    # Predicted-vs-observed series at the recovered optimum.
    recovered = SourceConfig.from_vector(vec)
    params = scenario.params
    for j, name in enumerate(free):
        if name in PARAM_NAMES:
            if name == "beta":
                params = _replace_param(params, "beta", float(result.q_best[j]))
            else:
                params = _replace_param(params, name, float(result.q_best[j]))
    init = eval_initial_field(recovered, scenario.grid, scenario.fixed_point())
    run = solve_fdm(params, init, scenario.grid)
    predicted = extract_observables(run, params, data.days)
    with open(out_dir / "predicted_vs_observed.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "I_pred", "I_obs", "C_pred", "C_obs", "D_pred", "D_obs"])
        for k in range(data.days.size):
            writer.writerow([
                repr(float(data.days[k])),
                repr(float(predicted.I[k])), repr(float(data.I[k])),
                repr(float(predicted.C[k])), repr(float(data.C[k])),
                repr(float(predicted.D[k])), repr(float(data.D[k])),
            ])
    _write_manifest(out_dir, "invert", config, args.seed, inputs, started)
    print(f"J_best = {result.j_best:.6g} after {result.n_evals} evaluations")
    return EXIT_OK


def _replace_param(params, name, value):
    from dataclasses import replace

    return replace(params, **{name: value})


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seirhcd",
        description="Spatial SEIR-HCD simulation, identifiability, and source inversion",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML/JSON config file")
        p.add_argument("--output-dir", required=True, help="directory for outputs")
        p.add_argument("--seed", type=int, default=0, help="master RNG seed")
        p.add_argument("--workers", type=int, default=1,
                       help="parallel worker processes for batched runs")

    p = sub.add_parser("simulate", help="run the forward model from a scenario file")
    common(p)
    p.add_argument("--solver", choices=("fdm", "fem"), default="fdm")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth", help="generate synthetic observation series")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sensitivity", help="first-order sensitivity over time slices")
    common(p)
    p.add_argument("--samples", type=int, default=None, help="base sample count N")
    p.add_argument("--output", default=None, help="observable compartment (S,E,I,R,H,C,D)")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("emulate", help="history matching with GP emulators")
    common(p)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_emulate)

    p = sub.add_parser("invert", help="tensor-train source recovery from observations")
    common(p)
    p.set_defaults(func=cmd_invert)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError, RuntimeError, ValueError, KeyError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
