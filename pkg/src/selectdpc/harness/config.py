"""Experiment configuration files.

Configs are TOML documents with the sections ``plant``, ``data``, ``dpc``,
``outer``, ``selection``, ``isomap``, ``run`` and ``sweep``; see the shipped
files under ``selectdpc/configs`` for every key.  Weight matrices are given
by their diagonals.  Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from ..deepc import ConfigError, DPCConfig, OutputConstraint
from ..controller import OuterLoopSettings
from ..plants import PLANTS
from ..selection import KINDS, SelectionMethod

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

POLICIES = ("iid", "random_walk", "demonstrations")
BASELINES = ("select_norm", "select_manifold", "select_random", "full_deepc", "time_windowed")


def _build(cls, d: dict, section: str):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


@dataclass
class PlantSection:
    name: str
    overrides: dict = field(default_factory=dict)


@dataclass
class DataSection:
    policy: str = "iid"
    a: float = 0.0
    b: float = 1.0
    episodes: int = 100
    steps: int = 100
    seed: int = 0
    init_low: list | None = None
    init_high: list | None = None


@dataclass
class DPCSection:
    T_p: int = 10
    T_f: int = 25
    Q: list = field(default_factory=list)
    R: list = field(default_factory=list)
    y_ref: list | None = None
    lambda_1: float = 0.0
    lambda_pi: float = 0.0
    slack_weight: float | None = None
    u_bounds: list | None = None
    y_constraints: list = field(default_factory=list)
    affine: bool = True


@dataclass
class OuterSection:
    n_cols: int = 100
    eps_conv: float = 1e-3
    max_outer_iters: int = 10
    warm_shift: bool = True
    compress: bool = False


@dataclass
class SelectionSection:
    kind: str = "norm"
    norm_order: float = 1
    standardize: bool = True
    seed: int = 0
    link_tolerance: float = 2.0


@dataclass
class IsomapSection:
    k_neighbors: int = 10
    d_embed: int | None = None
    n_est: int | None = None
    cache_dir: str | None = None


@dataclass
class RunSection:
    steps: int = 200
    x0: list | None = None
    init_perturbation: float = 0.0
    warmup_scale: float = 0.1
    blowup: float = 1e3
    snapshot_steps: list = field(default_factory=list)
    time_window: int | None = None


@dataclass
class SweepSection:
    n_cols: list = field(default_factory=lambda: [25, 50, 100, 200, 400])
    methods: list = field(default_factory=lambda: ["norm", "manifold", "random"])
    baselines: list = field(default_factory=lambda: ["select_norm", "full_deepc"])
    k_neighbors: list = field(default_factory=lambda: [5, 10, 20, 40])
    d_embed: list = field(default_factory=lambda: [2, 8, 16, 32])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    holdout_steps: int = 200
    holdout_seed: int = 10_000
    holdout_low: list | None = None
    holdout_high: list | None = None
    holdout_detune: float = 0.5
    holdout_dither: float = 0.2
    contrast_queries: int = 20
    contrast_dims: list = field(default_factory=list)
    isomap_points: int = 1000


@dataclass
class ExperimentConfig:
    name: str
    plant: PlantSection
    data: DataSection
    dpc: DPCSection
    outer: OuterSection = field(default_factory=OuterSection)
    selection: SelectionSection = field(default_factory=SelectionSection)
    isomap: IsomapSection = field(default_factory=IsomapSection)
    run: RunSection = field(default_factory=RunSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    output_dir: str = "out"
    version: int = 1

    def __post_init__(self):
        if self.plant.name not in PLANTS:
            raise ConfigError(f"unknown plant {self.plant.name!r}; known: {sorted(PLANTS)}")
        if self.data.policy not in POLICIES:
            raise ConfigError(f"unknown data policy {self.data.policy!r}; expected one of {POLICIES}")
        if not 0.0 <= self.data.a <= 1.0 or self.data.b < 0:
            raise ConfigError("data policy needs 0 <= a <= 1 and b >= 0")
        if self.selection.kind not in KINDS:
            raise ConfigError(f"unknown selection kind {self.selection.kind!r}")
        for b in self.sweep.baselines:
            if b not in BASELINES:
                raise ConfigError(f"unknown baseline {b!r}; expected one of {BASELINES}")
        for mth in self.sweep.methods:
            if mth not in ("norm", "manifold", "random", "full"):
                raise ConfigError(f"unknown sweep method {mth!r}")
        self.dpc_config()  # validates weights and bounds
        self.outer_settings()

    # -- typed views --------------------------------------------------------

    def dpc_config(self) -> DPCConfig:
        d = self.dpc
        if not d.Q or not d.R:
            raise ConfigError("[dpc] Q and R diagonals are required")
        cons = tuple(OutputConstraint(c["coeffs"], c.get("low", -np.inf), c.get("high", np.inf),
                                      c.get("steps")) for c in d.y_constraints)
        return DPCConfig(d.T_p, d.T_f, np.diag(np.asarray(d.Q, dtype=float)),
                         np.diag(np.asarray(d.R, dtype=float)), d.y_ref, d.lambda_1, d.lambda_pi,
                         d.slack_weight, None if d.u_bounds is None else np.asarray(d.u_bounds, float),
                         cons, d.affine)

    def selection_method(self, kind: str | None = None) -> SelectionMethod:
        s = self.selection
        return SelectionMethod(kind or s.kind, s.norm_order, None, s.standardize, s.seed, s.link_tolerance)

    def outer_settings(self, n_cols: int | None = None, kind: str | None = None) -> OuterLoopSettings:
        o = self.outer
        return OuterLoopSettings(n_cols or o.n_cols, self.selection_method(kind), o.eps_conv,
                                 o.max_outer_iters, o.warm_shift, o.compress)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def from_dict(doc: dict) -> ExperimentConfig:
    doc = dict(doc)
    sections = {
        "plant": PlantSection, "data": DataSection, "dpc": DPCSection, "outer": OuterSection,
        "selection": SelectionSection, "isomap": IsomapSection, "run": RunSection,
        "sweep": SweepSection,
    }
    kw = {}
    for key, cls in sections.items():
        if key in doc:
            kw[key] = _build(cls, doc.pop(key), key)
    for required in ("plant", "data", "dpc"):
        if required not in kw:
            raise ConfigError(f"missing section [{required}]")
    top = {f.name for f in fields(ExperimentConfig)} - set(sections)
    unknown = set(doc) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if "name" not in doc:
        raise ConfigError("config needs a name")
    return ExperimentConfig(**doc, **kw)


def shipped_configs() -> list[str]:
    root = resources.files("selectdpc.configs")
    return sorted(p.name[:-5] for p in root.iterdir()
                  if p.name.endswith(".toml") and p.name != "plants.toml")


def load_config(ref) -> ExperimentConfig:
    """Load a config from a path, or by the name of a shipped config.

    ``rocket_iid``, ``rocket_iid.toml`` and ``rocket_iid.cfg`` all resolve to
    the shipped file when no such path exists on disk.
    """
    path = Path(ref)
    if path.is_file():
        text = path.read_text()
    else:
        stem = path.name.split(".")[0]
        if stem not in shipped_configs():
            raise ConfigError(f"config {str(ref)!r} not found (shipped: {', '.join(shipped_configs())})")
        text = resources.files("selectdpc.configs").joinpath(stem + ".toml").read_text()
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {ref}: {exc}") from None
    return from_dict(doc)
