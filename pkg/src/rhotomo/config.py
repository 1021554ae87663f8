"""Run configuration: YAML (or JSON) with a strict schema.

Every block is a dataclass; unknown keys anywhere are rejected so typos in
ablation sweeps fail loudly instead of silently falling back to defaults.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .errors import ValidationError
from .field import FieldConfig
from .geometry import ScanGeometry, uniform_angles
from .trainer import TrainConfig

__all__ = [
    "GeometryBlock",
    "SimulationBlock",
    "PhantomBlock",
    "PriorBlock",
    "TrainingBlock",
    "PathsBlock",
    "RunConfig",
    "load_config",
    "parse_config",
]


@dataclass
class GeometryBlock:
    dso: float
    dsd: float
    det_rows: int
    det_cols: int
    det_spacing_u: float
    det_spacing_v: float
    vol_dims: list[int]
    vol_spacing: list[float] = field(default_factory=lambda: [1.0, 1.0, 1.0])


@dataclass
class SimulationBlock:
    views: int = 100
    angle_range_deg: list[float] = field(default_factory=lambda: [0.0, 180.0])
    noise_level: float = 0.03
    seed: int = 0
    samples: int = 128
    split: bool = True


@dataclass
class PhantomBlock:
    supersample: int = 3


@dataclass
class PriorBlock:
    algorithm: str = "fdk"
    iterations: int = 30
    tol: float = 1e-6
    interpolation: str = "nearest"
    samples: int = 128


@dataclass
class TrainingBlock:
    max_steps: int
    batch_rays: int = 1024
    samples_per_ray: int = 192
    lr_initial: float = 1e-3
    lr_final: float = 1e-4
    lr_switch_fraction: float = 0.5
    seed: int = 0
    eval_every: int = 0
    eval_samples: int | None = None
    log_wall_time: bool = False


@dataclass
class PathsBlock:
    phantom: str = "phantom.hdr"
    projections: str = "projections.hdr"
    train_projections: str = "train.hdr"
    test_projections: str = "test.hdr"
    # "{algorithm}" expands to the classical reconstruction algorithm.
    prior: str = "recon_{algorithm}.hdr"
    recon: str = "recon_{algorithm}.hdr"
    recon_metrics: str = "recon_metrics_{algorithm}.csv"
    residuals: str = "cgls_residuals.csv"
    checkpoint: str = "model.ckpt"
    train_log: str = "train_log.csv"
    eval_nvs: str = "eval_nvs.csv"
    eval_recon: str = "eval_recon.csv"
    extracted: str = "extracted.hdr"
    slices_dir: str | None = None
    sweep: str = "sweep.csv"


@dataclass
class RunConfig:
    geometry: GeometryBlock
    training: TrainingBlock
    name: str = "case"
    simulation: SimulationBlock = dataclasses.field(default_factory=SimulationBlock)
    phantom: PhantomBlock = dataclasses.field(default_factory=PhantomBlock)
    prior: PriorBlock = dataclasses.field(default_factory=PriorBlock)
    paths: PathsBlock = dataclasses.field(default_factory=PathsBlock)
    field: FieldConfig = dataclasses.field(default_factory=FieldConfig)

    def __post_init__(self):
        if self.prior.algorithm not in ("fdk", "cgls", "none"):
            raise ValidationError(f"prior.algorithm must be fdk, cgls or none, got {self.prior.algorithm!r}")
        if self.prior.algorithm == "none" and self.field.prior_features:
            raise ValidationError("prior.algorithm 'none' requires field.prior_features: 0")
        if self.simulation.views < 1:
            raise ValidationError("simulation.views must be >= 1")
        if len(self.simulation.angle_range_deg) != 2:
            raise ValidationError("simulation.angle_range_deg needs [start, stop]")
        # Builds and validates the derived objects.
        self.scan_geometry()
        self.train_config()

    def angles(self) -> np.ndarray:
        start, stop = (math.radians(a) for a in self.simulation.angle_range_deg)
        return uniform_angles(self.simulation.views, start, stop)

    def scan_geometry(self) -> ScanGeometry:
        g = self.geometry
        return ScanGeometry(
            g.dso, g.dsd, g.det_rows, g.det_cols, g.det_spacing_u, g.det_spacing_v,
            tuple(g.vol_dims), tuple(g.vol_spacing), self.angles(),
        )

    def train_config(self) -> TrainConfig:
        t = dataclasses.asdict(self.training)
        t.pop("log_wall_time")
        return TrainConfig(prior_mode=self.prior.interpolation, prior_source=self.prior.algorithm, **t)

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(
            self,
            simulation=dataclasses.replace(self.simulation, seed=seed),
            training=dataclasses.replace(self.training, seed=seed),
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_BLOCKS = {
    "geometry": GeometryBlock,
    "simulation": SimulationBlock,
    "phantom": PhantomBlock,
    "prior": PriorBlock,
    "field": FieldConfig,
    "training": TrainingBlock,
    "paths": PathsBlock,
}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ValidationError(f"{where}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ValidationError(f"{where}: unknown key(s) {', '.join(unknown)}")
    missing = [
        n for n, f in known.items()
        if n not in data and f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
    ]
    if missing:
        raise ValidationError(f"{where}: missing required key(s) {', '.join(missing)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: {exc}") from None


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ValidationError("config root must be a mapping")
    unknown = sorted(set(data) - set(_BLOCKS) - {"name"})
    if unknown:
        raise ValidationError(f"config: unknown key(s) {', '.join(unknown)}")
    for required in ("geometry", "training"):
        if required not in data:
            raise ValidationError(f"config: missing block {required!r}")
    blocks = {k: _build(cls, data[k], k) for k, cls in _BLOCKS.items() if k in data}
    if "name" in data:
        blocks["name"] = str(data["name"])
    return RunConfig(**blocks)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such config file: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ValidationError(f"{path}: {exc}") from None
    return parse_config(data)
