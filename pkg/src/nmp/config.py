"""Run configuration: every module's settings in one JSON document."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .bev import RoiSpec
from .losses import LossConfig
from .network import BackboneConfig, ModelConfig
from .sampler import SamplerConfig
from .scenario.generate import ScenarioConfig
from .scenario.lidar import LidarConfig

BACKBONE_PRESETS = {"desk": BackboneConfig.desk, "full": BackboneConfig.full, "tiny": BackboneConfig.tiny}
MAP_CHANNELS = 4


@dataclass
class ModelSpec:
    backbone: str = "desk"
    cost_filters: tuple = (32, 32, 16)
    init_seed: int = 0

    def backbone_config(self) -> BackboneConfig:
        if self.backbone not in BACKBONE_PRESETS:
            raise ValueError(f"unknown backbone preset {self.backbone!r}")
        return BACKBONE_PRESETS[self.backbone]()


@dataclass
class TrainConfig:
    steps: int = 2000
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    clip_norm: float = 10.0
    n_negatives: int = 100
    perception_loss: bool = True
    plan_loss: bool = True
    penalty: bool = True
    seed: int = 0
    max_skipped_steps: int = 2
    eval_every: int = 500

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if not (self.perception_loss or self.plan_loss):
            raise ValueError("at least one of the perception and planning losses must be on")
        if self.steps < 0 or self.n_negatives < 1:
            raise ValueError("steps must be >= 0 and n_negatives >= 1")


@dataclass
class EvalConfig:
    score_threshold: float = 0.5
    nms_iou: float = 0.1
    manual_source: str = "detections"
    sampler_seed_offset: int = 7919
    map_iou: float = 0.5

    def __post_init__(self):
        if self.manual_source not in ("detections", "ground_truth"):
            raise ValueError("manual_source must be 'detections' or 'ground_truth'")


@dataclass
class DataConfig:
    root_seed: int = 0
    n_train: int = 20
    n_val: int = 5
    n_test: int = 50


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    roi: RoiSpec = field(default_factory=RoiSpec)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            in_channels=self.roi.n_occupancy + MAP_CHANNELS,
            T=self.scenario.T,
            backbone=self.model.backbone_config(),
            cost_filters=self.model.cost_filters,
            perception=self.train.perception_loss,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        sections = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(d) - set(sections)
        if unknown:
            raise ValueError(f"unknown config sections {sorted(unknown)}")
        kwargs = {}
        for name, f in sections.items():
            if name in d:
                kwargs[name] = _build(f.default_factory, d[name], name)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def with_overrides(self, overrides: list) -> "RunConfig":
        """Apply ``section.key=value`` strings, values parsed as JSON."""
        d = self.to_dict()
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep or "." not in key:
                raise ValueError(f"override must look like section.key=value, got {item!r}")
            section, name = key.split(".", 1)
            if section not in d or name not in d[section]:
                raise ValueError(f"unknown config key {key!r}")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            d[section][name] = value
        return RunConfig.from_dict(d)


def _build(factory, values: dict, section: str):
    proto = factory()
    names = {f.name for f in dataclasses.fields(proto)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown keys in [{section}]: {sorted(unknown)}")
    cleaned = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    return type(proto)(**{**dataclasses.asdict(proto), **cleaned})
