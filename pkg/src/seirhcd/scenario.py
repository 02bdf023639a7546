"""Scenario files: model parameters, grid, and initial state in TOML or JSON.

A scenario fully describes one forward problem.  The initial state comes
in three flavors: explicit bump sums for s and e ("bumps"), spatially
uniform counts ("uniform"), or a separate source-configuration file
("source").  Unknown keys anywhere in the file are rejected.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import BetaSchedule, GridSpec, ModelParams, StateField, StatePoint, validate_params
from .observe import Cap, SourceConfig, bump


class ConfigError(ValueError):
    """Scenario or pipeline configuration violates the documented schema."""


_PARAM_KEYS = {
    "alpha_i", "alpha_e", "beta", "beta_series", "eps_hc", "mu",
    "t_inc", "t_inf", "t_hosp", "t_crit", "t_imm",
    "v_s", "v_e", "v_i", "v_r", "population",
}
_GRID_KEYS = {"nx", "nt", "t_end"}
_INITIAL_KEYS = {
    "kind", "infected", "recovered", "hospitalized", "critical", "dead",
    "susceptible", "exposed", "s_bumps", "e_bumps", "source",
}
_BUMP_KEYS = {"a", "b", "c", "power"}


@dataclass(frozen=True)
class BumpTerm:
    a: float
    b: float
    c: float
    power: int = 4

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return bump(x, self.a, self.b, self.c, self.power)


@dataclass
class InitialSpec:
    """Grid-independent description of the initial state."""

    kind: str  # "bumps" | "uniform" | "source"
    counts: dict  # compartment name -> head count
    s_bumps: tuple[BumpTerm, ...] = ()
    e_bumps: tuple[BumpTerm, ...] = ()
    source: SourceConfig | None = None

    def fixed_point(self, population: float) -> StatePoint:
        """Uniform densities for the compartments not described by caps."""
        return StatePoint(
            s=self.counts.get("susceptible", 0.0) / population,
            e=self.counts.get("exposed", 0.0) / population,
            i=self.counts.get("infected", 0.0) / population,
            r=self.counts["recovered"] / population,
            h=self.counts["hospitalized"] / population,
            c=self.counts["critical"] / population,
            d=self.counts["dead"] / population,
        )

    def build(self, grid: GridSpec, population: float) -> StateField:
        x = grid.x()
        fixed = self.fixed_point(population)
        values = np.empty((7, x.size))
        values[2] = fixed.i
        values[3] = fixed.r
        values[4] = fixed.h
        values[5] = fixed.c
        values[6] = fixed.d
        if self.kind == "bumps":
            values[0] = sum(term.evaluate(x) for term in self.s_bumps)
            values[1] = sum(term.evaluate(x) for term in self.e_bumps)
        elif self.kind == "uniform":
            values[0] = fixed.s
            values[1] = fixed.e
        elif self.kind == "source":
            values[0] = sum(cap(x) for cap in self.source.s_caps)
            values[1] = sum(cap(x) for cap in self.source.e_caps)
            values[2] = self.source.i0
        else:
            raise ConfigError(f"initial.kind {self.kind!r} is not one of bumps/uniform/source")
        return StateField(x, values)


@dataclass
class Scenario:
    """One fully specified forward problem."""

    params: ModelParams
    grid: GridSpec
    initial: InitialSpec
    path: Path | None = None

    def initial_field(self, grid: GridSpec | None = None) -> StateField:
        return self.initial.build(grid or self.grid, self.params.population)

    def fixed_point(self) -> StatePoint:
        return self.initial.fixed_point(self.params.population)


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"missing required field '{where}.{key}'")
    return table[key]


def _reject_unknown(table: dict, allowed: set, where: str):
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")


def _parse_bumps(entries, where: str) -> tuple[BumpTerm, ...]:
    terms = []
    for idx, entry in enumerate(entries):
        _reject_unknown(entry, _BUMP_KEYS, f"{where}[{idx}]")
        terms.append(
            BumpTerm(
                a=float(_require(entry, "a", f"{where}[{idx}]")),
                b=float(_require(entry, "b", f"{where}[{idx}]")),
                c=float(_require(entry, "c", f"{where}[{idx}]")),
                power=int(entry.get("power", 4)),
            )
        )
    return tuple(terms)


def load_source_config(path) -> SourceConfig:
    """SourceConfig from JSON: {"s_caps": [[a,b,c]x3], "e_caps": ..., "i0": x}."""
    with open(path) as fh:
        raw = json.load(fh)
    unknown = set(raw) - {"s_caps", "e_caps", "i0"}
    if unknown:
        raise ConfigError(f"unknown keys in source file {path}: {sorted(unknown)}")
    for key in ("s_caps", "e_caps", "i0"):
        if key not in raw:
            raise ConfigError(f"source file {path} lacks '{key}'")
    if len(raw["s_caps"]) != 3 or len(raw["e_caps"]) != 3:
        raise ConfigError("source files need exactly 3 caps per compartment")
    return SourceConfig(
        s_caps=tuple(Cap(*map(float, triple)) for triple in raw["s_caps"]),
        e_caps=tuple(Cap(*map(float, triple)) for triple in raw["e_caps"]),
        i0=float(raw["i0"]),
    )


def save_source_config(src: SourceConfig, path) -> None:
    payload = {
        "s_caps": [[cap.a, cap.b, cap.c] for cap in src.s_caps],
        "e_caps": [[cap.a, cap.b, cap.c] for cap in src.e_caps],
        "i0": src.i0,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _load_raw(path: Path) -> dict:
    if path.suffix.lower() == ".json":
        with open(path) as fh:
            return json.load(fh)
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file (TOML or JSON by extension)."""
    path = Path(path)
    try:
        raw = _load_raw(path)
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}")
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    return scenario_from_dict(raw, base=path.parent, path=path)


def scenario_from_dict(raw: dict, base: Path | None = None, path: Path | None = None) -> Scenario:
    base = base or Path.cwd()
    _reject_unknown(raw, {"params", "grid", "initial"}, "scenario")
    params_tbl = _require(raw, "params", "scenario")
    grid_tbl = _require(raw, "grid", "scenario")
    init_tbl = _require(raw, "initial", "scenario")

    _reject_unknown(params_tbl, _PARAM_KEYS, "params")
    _reject_unknown(grid_tbl, _GRID_KEYS, "grid")
    _reject_unknown(init_tbl, _INITIAL_KEYS, "initial")

    if "beta_series" in params_tbl:
        if "beta" in params_tbl:
            raise ConfigError("give either params.beta or params.beta_series, not both")
        beta = BetaSchedule.from_file(base / params_tbl["beta_series"])
    else:
        beta = float(_require(params_tbl, "beta", "params"))

    kwargs = {}
    for key in ("alpha_i", "alpha_e", "eps_hc", "mu", "t_inc", "t_inf",
                "t_hosp", "t_crit", "t_imm", "v_s", "v_e", "v_i", "v_r"):
        kwargs[key] = float(_require(params_tbl, key, "params"))
    params = ModelParams(
        beta=beta,
        population=int(_require(params_tbl, "population", "params")),
        **kwargs,
    )
    violations = validate_params(params)
    if violations:
        raise ConfigError("invalid params: " + "; ".join(violations))

    try:
        grid = GridSpec(
            nx=int(_require(grid_tbl, "nx", "grid")),
            nt=int(_require(grid_tbl, "nt", "grid")),
            t_end=float(_require(grid_tbl, "t_end", "grid")),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid grid: {exc}")

    kind = _require(init_tbl, "kind", "initial")
    counts = {}
    for name in ("infected", "recovered", "hospitalized", "critical", "dead"):
        if kind == "source" and name == "infected":
            continue
        counts[name] = float(_require(init_tbl, name, "initial"))
    for name in ("susceptible", "exposed"):
        if kind == "uniform":
            counts[name] = float(_require(init_tbl, name, "initial"))
        elif name in init_tbl:
            counts[name] = float(init_tbl[name])

    s_bumps = e_bumps = ()
    source = None
    if kind == "bumps":
        s_bumps = _parse_bumps(_require(init_tbl, "s_bumps", "initial"), "initial.s_bumps")
        e_bumps = _parse_bumps(_require(init_tbl, "e_bumps", "initial"), "initial.e_bumps")
    elif kind == "source":
        source = load_source_config(base / _require(init_tbl, "source", "initial"))
    elif kind != "uniform":
        raise ConfigError(f"initial.kind must be bumps, uniform, or source, not {kind!r}")

    initial = InitialSpec(kind=kind, counts=counts, s_bumps=s_bumps, e_bumps=e_bumps, source=source)
    return Scenario(params=params, grid=grid, initial=initial, path=path)


def bundled_scenario_path(name: str = "novosibirsk-2022") -> Path:
    """Filesystem path of a scenario shipped with the package."""
    ref = resources.files("seirhcd") / "scenarios" / f"{name}.toml"
    return Path(str(ref))


def load_bundled(name: str = "novosibirsk-2022") -> Scenario:
    return load_scenario(bundled_scenario_path(name))
