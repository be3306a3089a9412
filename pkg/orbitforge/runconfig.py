"""Run configuration: one JSON document, one frozen dataclass per block.

Omitted keys take the dataclass defaults; ``--set block.key=value``
overrides are applied to the raw document before validation.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Type, TypeVar, Union

from . import config
from .curve import Grid
from .errors import ConfigError
from .minimize import MinimizeOptions, MultistartOptions
from .mountainpass import PathOptions, RefineOptions
from .potential import PotentialSpec, SamplingConfig
from .symmetry import SymOptions

log = logging.getLogger("orbitforge.runconfig")

BLOCKS = ("potential", "grid", "solver", "multistart", "path", "sampling", "output")
FORMATS = ("csv", "parquet", "png")


@dataclass(frozen=True)
class GridConfig:
    T: float = 10.0
    M: int = 2001


@dataclass(frozen=True)
class SolverConfig:
    tol_grad: float = 1e-8
    tol_refine: float = 1e-8
    max_iter: int = 20000
    renorm_every: int = 25
    restarts: int = 2
    polish_below: float = 1e-3
    newton_max_iter: int = 50
    memory: int = 10


@dataclass(frozen=True)
class MultistartConfig:
    n_seeds: int = 32
    rng_seed: int = 0
    cluster_threshold: float = 0.05
    energy_window: float = 1e-3
    pair: Tuple[int, int] = (0, 1)


@dataclass(frozen=True)
class PathConfig:
    N: int = 17
    spring: Union[str, float] = "auto"
    climbing: bool = True
    tol_grad: float = 1e-3
    max_iter: int = 20000
    max_backtracks: int = 6
    record_every: int = 10
    splitting_delta: float = 0.05
    min_plateau: int = 25
    tol_3m: float = 1e-2
    drift_fraction: float = 0.1
    drift_window: int = 100


@dataclass(frozen=True)
class OutputConfig:
    directory: str = ""
    formats: Tuple[str, ...] = ("csv",)
    normalized: bool = False


@dataclass(frozen=True)
class RunConfig:
    potential: PotentialSpec
    grid: GridConfig = field(default_factory=GridConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    multistart: MultistartConfig = field(default_factory=MultistartConfig)
    path: PathConfig = field(default_factory=PathConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    source: Optional[str] = None

    # ---- conversions to solver options ----
    def make_grid(self) -> Grid:
        return Grid(self.grid.T, self.grid.M)

    def minimize_options(self) -> MinimizeOptions:
        s = self.solver
        return MinimizeOptions(tol_grad=s.tol_grad, max_iter=s.max_iter, renorm_every=s.renorm_every,
                               polish_below=s.polish_below, newton_max_iter=s.newton_max_iter, memory=s.memory,
                               restarts=s.restarts)

    def multistart_options(self, workers: int = 1) -> MultistartOptions:
        m = self.multistart
        return MultistartOptions(n_seeds=m.n_seeds, rng_seed=m.rng_seed, cluster_threshold=m.cluster_threshold,
                                 energy_window=m.energy_window, workers=workers)

    def path_options(self) -> PathOptions:
        p = self.path
        return PathOptions(tol_grad=p.tol_grad, max_iter=p.max_iter, spring=p.spring, climbing=p.climbing,
                           max_backtracks=p.max_backtracks, record_every=p.record_every,
                           splitting_delta=p.splitting_delta, min_plateau=p.min_plateau)

    def refine_options(self) -> RefineOptions:
        return RefineOptions(tol_refine=self.solver.tol_refine, max_iter=self.solver.newton_max_iter,
                             cluster_threshold=self.multistart.cluster_threshold)

    def sym_options(self) -> SymOptions:
        p = self.path
        return SymOptions(tol=p.tol_grad, drift_fraction=p.drift_fraction, drift_window=p.drift_window,
                          delta=p.splitting_delta, min_plateau=p.min_plateau,
                          polish_iter=self.solver.newton_max_iter, tol_refine=self.solver.tol_refine)

    def to_dict(self, normalized: bool = False) -> Dict[str, Any]:
        out: Dict[str, Any] = {"potential": self.potential.to_dict()}
        for name in BLOCKS[1:]:
            out[name] = asdict(getattr(self, name))
        out["multistart"]["pair"] = list(self.multistart.pair)
        out["output"]["formats"] = list(self.output.formats)
        if normalized:
            out["output"].pop("directory", None)
        return out


T = TypeVar("T")


def _block(cls: Type[T], raw: Any, name: str) -> T:
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"block {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in block {name!r}: {sorted(unknown)}")
    try:
        return cls(**raw)
    except TypeError as e:
        raise ConfigError(f"bad block {name!r}: {e}") from e


def _validate(cfg: RunConfig) -> RunConfig:
    g = cfg.grid
    if int(g.M) != g.M or int(g.M) % 2 == 0 or g.M < 3:
        raise ConfigError(f"grid.M={g.M} must be an odd integer >= 3")
    if g.T < 1:
        raise ConfigError(f"grid.T={g.T} must be >= 1")
    for label, value in (("solver.tol_grad", cfg.solver.tol_grad), ("solver.tol_refine", cfg.solver.tol_refine),
                         ("path.tol_grad", cfg.path.tol_grad), ("path.tol_3m", cfg.path.tol_3m),
                         ("multistart.cluster_threshold", cfg.multistart.cluster_threshold),
                         ("multistart.energy_window", cfg.multistart.energy_window),
                         ("path.splitting_delta", cfg.path.splitting_delta)):
        if not float(value) > 0:
            raise ConfigError(f"{label}={value} must be > 0")
    if cfg.multistart.n_seeds < 1:
        raise ConfigError(f"multistart.n_seeds={cfg.multistart.n_seeds} must be >= 1")
    if cfg.path.N < 3:
        raise ConfigError(f"path.N={cfg.path.N} must be >= 3")
    if isinstance(cfg.path.spring, str) and cfg.path.spring != "auto":
        raise ConfigError(f"path.spring={cfg.path.spring!r} must be 'auto' or a number")
    bad = set(cfg.output.formats) - set(FORMATS)
    if bad:
        raise ConfigError(f"unknown output formats {sorted(bad)}; known: {list(FORMATS)}")
    a, b = cfg.multistart.pair
    if not (0 <= a < cfg.potential.n_wells and 0 <= b < cfg.potential.n_wells and a != b):
        raise ConfigError(f"multistart.pair={[a, b]} does not name two distinct wells")
    return cfg


def parse_override(text: str) -> Tuple[str, str, Any]:
    """``block.key=value``; the value is JSON when it parses, else a plain string."""
    target, sep, raw = text.partition("=")
    block, dot, key = target.strip().partition(".")
    if not sep or not dot or not key:
        raise ConfigError(f"override {text!r} is not of the form block.key=value")
    if block not in BLOCKS:
        raise ConfigError(f"override {text!r} names unknown block {block!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return block, key, value


def apply_overrides(doc: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    doc = {k: (dict(v) if isinstance(v, dict) else v) for k, v in doc.items()}
    for text in overrides:
        block, key, value = parse_override(text)
        doc.setdefault(block, {})
        if not isinstance(doc[block], dict):
            raise ConfigError(f"block {block!r} must be an object")
        doc[block][key] = value
        log.debug("override %s.%s=%r", block, key, value)
    return doc


def from_document(doc: Dict[str, Any], source: Optional[str] = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("run configuration must be a JSON object")
    unknown = set(doc) - set(BLOCKS)
    if unknown:
        raise ConfigError(f"unknown configuration blocks: {sorted(unknown)}")
    if "potential" not in doc:
        raise ConfigError("run configuration needs a 'potential' block")
    ms = dict(doc.get("multistart") or {})
    if "pair" in ms:
        ms["pair"] = tuple(int(x) for x in ms["pair"])
    out = dict(doc.get("output") or {})
    if "formats" in out:
        out["formats"] = tuple(str(x) for x in out["formats"])
    cfg = RunConfig(
        potential=PotentialSpec.from_dict(doc["potential"]),
        grid=_block(GridConfig, doc.get("grid"), "grid"),
        solver=_block(SolverConfig, doc.get("solver"), "solver"),
        multistart=_block(MultistartConfig, ms, "multistart"),
        path=_block(PathConfig, doc.get("path"), "path"),
        sampling=_block(SamplingConfig, doc.get("sampling"), "sampling"),
        output=_block(OutputConfig, out, "output"),
        source=source,
    )
    return _validate(cfg)


def load_run_config(path: Union[str, Path], overrides: Sequence[str] = (), *, out: Optional[str] = None,
                    normalized: Optional[bool] = None) -> RunConfig:
    """Read a run configuration; dedicated flags win over ``--set`` which wins over the file."""
    p = Path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {p} is not valid JSON: {e}") from e
    cfg = from_document(apply_overrides(doc, overrides), source=str(p))
    output = cfg.output
    if out:
        output = replace(output, directory=out)
    elif not output.directory:
        output = replace(output, directory=config.OUT_DIR)
    if normalized is not None and normalized:
        output = replace(output, normalized=True)
    cfg = replace(cfg, output=output)
    log.info("config source=%s potential=%s T=%s M=%s out=%s", p, cfg.potential.kind, cfg.grid.T, cfg.grid.M,
             cfg.output.directory)
    return cfg
