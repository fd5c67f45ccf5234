"""Experiment configuration read from INI-style text (``configparser``).

Grammar (every key optional, defaults shown)::

    [model]
    kind = perturbed          ; hyperbolic | warped | perturbed
    n = 1
    a = 0.5
    eps = 0.05
    eps_N = 0.05
    kappa = poly4

    [grid]
    w0 = 0.0
    w_max = 20.0
    Nw = 401
    L = 1.0
    Nx = 33

    [pipeline]
    stages = model, eigenfunction, compactify, holder, battery
    coordinates = fermi       ; fermi | harmonic (harmonic needs the charts stage, n = 1)

    [norms]
    p = 0                     ; 0 means 2 (n + 2)
    q = 2
    r = 1.0
    station_start = 2.0
    station_step = 1.0
    station_top_buffer = 2.0

    [solver]
    tol = 1e-10
    method = auto             ; auto | direct | gmres
    sweep = false
    buffer = 1.0

    [output]
    dir = out
    format = csv              ; csv | json
    plot = false

    [run]
    seed = 0
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

from ..errors import ConfigError
from ..metric_zoo import ModelSpec
from ..tensor_core import HalfSpaceGrid

STAGES = ("model", "eigenfunction", "charts", "compactify", "holder", "battery")
DEPENDENCIES = {
    "model": (),
    "eigenfunction": ("model",),
    "charts": ("model",),
    "compactify": ("model", "eigenfunction"),
    "holder": ("compactify",),
    "battery": ("model", "eigenfunction"),
}
DEFAULT_STAGES = ("model", "eigenfunction", "compactify", "holder", "battery")


@dataclass(frozen=True)
class GridSpec:
    w0: float = 0.0
    w_max: float = 20.0
    Nw: int = 401
    L: float = 1.0
    Nx: int = 33

    def build(self, n: int) -> HalfSpaceGrid:
        return HalfSpaceGrid(n, self.w0, self.w_max, self.Nw, self.L, self.Nx)


@dataclass(frozen=True)
class NormSpec:
    p: float = 0.0
    q: float = 2.0
    r: float = 1.0
    station_start: float = 2.0
    station_step: float = 1.0
    station_top_buffer: float = 2.0


@dataclass(frozen=True)
class SolverSpec:
    tol: float = 1e-10
    method: str = "auto"
    sweep: bool = False
    buffer: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    stages: tuple = DEFAULT_STAGES
    coordinates: str = "fermi"
    norms: NormSpec = field(default_factory=NormSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    out_dir: str = "out"
    fmt: str = "csv"
    plot: bool = False
    seed: int = 0

    def __post_init__(self):
        validate(self)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = list(self.stages)
        return d


def validate(cfg: ExperimentConfig) -> None:
    unknown = [s for s in cfg.stages if s not in STAGES]
    if unknown:
        raise ConfigError(f"unknown stages: {', '.join(unknown)}")
    listed = set(cfg.stages)
    for s in cfg.stages:
        missing = [d for d in DEPENDENCIES[s] if d not in listed]
        if missing:
            raise ConfigError(f"stage {s!r} needs {', '.join(missing)}")
    if cfg.coordinates not in ("fermi", "harmonic"):
        raise ConfigError(f"unknown coordinates {cfg.coordinates!r}")
    if cfg.coordinates == "harmonic":
        if "charts" not in listed:
            raise ConfigError("harmonic coordinates need the charts stage")
        if cfg.model.n != 1:
            raise ConfigError("harmonic coordinates are supported for n = 1 only")
    if cfg.fmt not in ("csv", "json"):
        raise ConfigError(f"unknown format {cfg.fmt!r}")
    if cfg.solver.method not in ("auto", "direct", "gmres"):
        raise ConfigError(f"unknown solver method {cfg.solver.method!r}")
    if cfg.norms.q <= 0 or cfg.norms.p < 0 or cfg.norms.r <= 0:
        raise ConfigError("norm exponents and radius must be positive")
    if cfg.norms.station_step <= 0:
        raise ConfigError("station step must be positive")
    # constructs and checks the grid bounds
    cfg.grid.build(cfg.model.n)


def _ordered(stages) -> tuple:
    return tuple(s for s in STAGES if s in set(stages))


def _get(parser, section, key, conv, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        if conv is bool:
            return parser.getboolean(section, key)
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    known = {"model", "grid", "pipeline", "norms", "solver", "output", "run"}
    extra = set(parser.sections()) - known
    if extra:
        raise ConfigError(f"unknown sections: {', '.join(sorted(extra))}")
    base = ModelSpec()
    model = ModelSpec(
        kind=_get(parser, "model", "kind", str, base.kind),
        n=_get(parser, "model", "n", int, base.n),
        a=_get(parser, "model", "a", float, base.a),
        eps=_get(parser, "model", "eps", float, base.eps),
        eps_N=_get(parser, "model", "eps_N", float, base.eps_N),
        kappa=_get(parser, "model", "kappa", str, base.kappa),
    )
    g = GridSpec()
    grid = GridSpec(*(_get(parser, "grid", k, type(getattr(g, k)), getattr(g, k))
                      for k in ("w0", "w_max", "Nw", "L", "Nx")))
    stages_raw = _get(parser, "pipeline", "stages", str, None)
    stages = DEFAULT_STAGES if stages_raw is None else _ordered(
        [s.strip() for s in stages_raw.split(",") if s.strip()] if stages_raw.strip() else [])
    if stages_raw is not None:
        bad = [s.strip() for s in stages_raw.split(",") if s.strip() and s.strip() not in STAGES]
        if bad:
            raise ConfigError(f"unknown stages: {', '.join(bad)}")
    ns = NormSpec()
    norms = NormSpec(*(_get(parser, "norms", k, float, getattr(ns, k))
                       for k in ("p", "q", "r", "station_start", "station_step", "station_top_buffer")))
    ss = SolverSpec()
    solver = SolverSpec(
        tol=_get(parser, "solver", "tol", float, ss.tol),
        method=_get(parser, "solver", "method", str, ss.method),
        sweep=_get(parser, "solver", "sweep", bool, ss.sweep),
        buffer=_get(parser, "solver", "buffer", float, ss.buffer),
    )
    return ExperimentConfig(
        model=model, grid=grid, stages=stages,
        coordinates=_get(parser, "pipeline", "coordinates", str, "fermi"),
        norms=norms, solver=solver,
        out_dir=_get(parser, "output", "dir", str, "out"),
        fmt=_get(parser, "output", "format", str, "csv"),
        plot=_get(parser, "output", "plot", bool, False),
        seed=_get(parser, "run", "seed", int, 0),
    )


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def with_overrides(cfg: ExperimentConfig, grid: Optional[tuple] = None, order: Optional[float] = None,
                   seed: Optional[int] = None, out_dir: Optional[str] = None,
                   fmt: Optional[str] = None) -> ExperimentConfig:
    """Apply command-line overrides; ``grid`` is ``(Nw, Nx)``."""
    if grid is not None:
        cfg = replace(cfg, grid=replace(cfg.grid, Nw=int(grid[0]), Nx=int(grid[1])))
    if order is not None:
        cfg = replace(cfg, model=replace(cfg.model, a=float(order)))
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    if out_dir is not None:
        cfg = replace(cfg, out_dir=str(out_dir))
    if fmt is not None:
        cfg = replace(cfg, fmt=fmt)
    return cfg
