"""Run configuration: TOML files with strict key checking, plus shipped presets."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from lpmfg.equilibrium import INITIAL_FLOWS, FixedPointParams
from lpmfg.grid import DiscreteGrid, GridError, build_grid
from lpmfg.lp import SolverOptions
from lpmfg.model import (InitialLaw, InventoryParams, LinearParams, MfgModel, ModelError, inventory_model,
                         linear_model)

MODEL_KINDS = ("inventory", "linear")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSection:
    kind: str = "inventory"
    horizon: float = 1.0
    inventory: InventoryParams = field(default_factory=InventoryParams)
    linear: LinearParams = field(default_factory=LinearParams)
    initial_law: InitialLaw = field(default_factory=InitialLaw)


@dataclass(frozen=True)
class GridSection:
    N: int = 50
    M: int = 60
    K: int = 5
    action_range: tuple[float, float] = (0.0, 0.7)


@dataclass(frozen=True)
class EquilibriumSection:
    damping: float = 0.5
    max_iters: int = 200
    flow_tolerance: float = 1e-6
    exploitability_tolerance: float = 1e-6
    initial_flow: str = "uncontrolled-rollforward"
    probe: bool = True
    backend: str = "highs"


@dataclass(frozen=True)
class SimulationSection:
    n_paths: int = 100_000
    substeps: int = 4
    seed: int = 0
    eps_disc: float | None = None  # default 0.02 |J_LP| + 0.01
    w1_bound: float = 0.05


@dataclass(frozen=True)
class OutputSection:
    dir: str | None = None
    dump_lp: bool = False
    dump_generator: bool = False


@dataclass(frozen=True)
class RunConfig:
    name: str = "run"
    model: ModelSection = field(default_factory=ModelSection)
    grid: GridSection = field(default_factory=GridSection)
    equilibrium: EquilibriumSection = field(default_factory=EquilibriumSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    output: OutputSection = field(default_factory=OutputSection)
    override_cfl: bool = False

    def fixed_point_params(self) -> FixedPointParams:
        e = self.equilibrium
        return FixedPointParams(e.damping, e.max_iters, e.flow_tolerance, e.exploitability_tolerance,
                                e.initial_flow, e.probe, SolverOptions(backend=e.backend),
                                self.override_cfl)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


_INT_FIELDS = {"N", "M", "K", "max_iters", "n_paths", "substeps", "seed"}


def _coerce(section: str, name: str, value, ftype):
    where = f"{section}.{name}".lstrip(".")
    if name in _INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if ftype in (bool, "bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false, got {value!r}")
        return value
    if ftype in (str, "str", "str | None"):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    if name in ("action_range",):
        if not (isinstance(value, list) and len(value) == 2):
            raise ConfigError(f"{where} must be a two-element list [lo, hi]")
        return tuple(float(_coerce(section, name + "[]", v, float)) for v in value)
    if name == "weights":
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list of numbers")
        return tuple(float(_coerce(section, "weights[]", v, float)) for v in value)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number, got {value!r}")
    return float(value)


def _build(cls, data: dict, section: str):
    label = section or "top level"
    if not isinstance(data, dict):
        raise ConfigError(f"[{label}] must be a table")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{label}]: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        if dataclasses.is_dataclass(f.default_factory if f.default_factory is not dataclasses.MISSING else None):
            kwargs[name] = _build(f.default_factory, value, f"{section}.{name}".lstrip("."))
        else:
            kwargs[name] = _coerce(section, name, value, f.type)
    try:
        return cls(**kwargs)
    except (ModelError, ValueError, TypeError) as exc:
        raise ConfigError(f"[{label}]: {exc}") from exc


def parse_config(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data, "")
    _check(cfg)
    return cfg


def _check(cfg: RunConfig) -> None:
    m, g, e, s = cfg.model, cfg.grid, cfg.equilibrium, cfg.simulation
    if m.kind not in MODEL_KINDS:
        raise ConfigError(f"model.kind must be one of {MODEL_KINDS}, got {m.kind!r}")
    if not m.horizon > 0:
        raise ConfigError(f"model.horizon must be positive, got {m.horizon}")
    for name, value, least in (("N", g.N, 1), ("M", g.M, 1), ("K", g.K, 0)):
        if value < least:
            raise ConfigError(f"grid.{name} must be >= {least}, got {value}")
    lo, hi = g.action_range
    if hi < lo or (g.K >= 1 and hi == lo):
        raise ConfigError(f"grid.action_range [{lo}, {hi}] is empty for K = {g.K}")
    if not 0.0 < e.damping <= 1.0:
        raise ConfigError(f"equilibrium.damping must lie in (0, 1], got {e.damping}")
    if e.max_iters < 1:
        raise ConfigError(f"equilibrium.max_iters must be >= 1, got {e.max_iters}")
    if e.flow_tolerance <= 0 or e.exploitability_tolerance <= 0:
        raise ConfigError("equilibrium tolerances must be positive")
    if e.initial_flow not in INITIAL_FLOWS:
        raise ConfigError(f"equilibrium.initial_flow must be one of {INITIAL_FLOWS}")
    if e.backend not in ("highs", "simplex"):
        raise ConfigError(f"equilibrium.backend must be 'highs' or 'simplex', got {e.backend!r}")
    if s.n_paths < 1 or s.substeps < 1:
        raise ConfigError("simulation.n_paths and simulation.substeps must be >= 1")
    if not 0 <= s.seed < 2**64:
        raise ConfigError(f"simulation.seed must be an unsigned 64-bit integer, got {s.seed}")


def preset_names() -> list[str]:
    root = resources.files("lpmfg") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def load_config(source: str | Path) -> RunConfig:
    """Read a TOML file, or a shipped preset when ``source`` names one."""
    path = Path(source)
    if path.is_file():
        text = path.read_text()
    elif str(source) in preset_names():
        text = (resources.files("lpmfg") / "presets" / f"{source}.toml").read_text()
    else:
        raise ConfigError(f"config {source!r} is neither a file nor a preset ({', '.join(preset_names())})")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return parse_config(data)


def build_model(cfg: RunConfig) -> MfgModel:
    m = cfg.model
    if m.kind == "inventory":
        return inventory_model(m.inventory, m.horizon, m.initial_law)
    return linear_model(m.linear, m.horizon, m.initial_law, name=cfg.name)


def build_run(cfg: RunConfig) -> tuple[MfgModel, DiscreteGrid]:
    model = build_model(cfg)
    g = cfg.grid
    try:
        grid = build_grid(model.domain, model.horizon, g.N, g.M, g.K, g.action_range)
    except GridError as exc:
        raise ConfigError(f"[grid]: {exc}") from exc
    return model, grid
