"""Experiment configuration: one YAML file driving every command.

Nested sections map onto the per-module dataclasses. Loading is strict:
unknown keys are rejected by name, every section dataclass runs its own
validation, and the cross-module constraints (shared sample rate, SOD
input width derived from the encoder) are checked up front so a bad file
fails before any expensive work starts.
"""

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .exceptions import ConfigError
from .objectives import LossConfig
from .sepnet import ModelConfig
from .sod import SodConfig


@dataclass
class SceneSimConfig:
    """Corpus synthesis knobs. Room/source ranges themselves are fixed
    by the scene sampler; these only control how much data to draw."""

    master_seed: int = 11
    train_scenes: int = 512
    test_scenes: int = 96
    duration: float = 2.0
    sample_rate: int = 16000

    def __post_init__(self):
        if self.train_scenes < 1 or self.test_scenes < 0:
            raise ConfigError("scene counts must be positive")
        if not 0.5 <= self.duration <= 30.0:
            raise ConfigError(
                f"scene duration {self.duration}s outside [0.5, 30]")
        if self.sample_rate != 16000:
            raise ConfigError("only 16 kHz is supported, no resampling")


@dataclass
class TrainingConfig:
    epochs: int = 15
    batch_size: int = 8
    crop_seconds: float = 0.125
    crops_per_scene: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1: {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1: {self.batch_size}")
        if self.crop_seconds <= 0:
            raise ConfigError("crop_seconds must be positive")
        if self.crops_per_scene < 1:
            raise ConfigError("crops_per_scene must be >= 1")


@dataclass
class SodTrainingConfig:
    """Overlap-detector knobs. input_dim is derived (2 * encoder_dim),
    so it does not appear here."""

    hidden: int = 16
    threshold: float = 0.5
    warmup_ms: float = 500.0
    seed: int = 0
    steps: int = 400
    batch_size: int = 8
    crop_frames: int = 500
    lr: float = 3e-3

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"sod steps must be >= 1: {self.steps}")
        if self.crop_frames < 1:
            raise ConfigError("sod crop_frames must be >= 1")
        if not self.lr > 0:
            raise ConfigError(f"sod lr must be > 0: {self.lr}")


@dataclass
class PathsConfig:
    work_dir: str = "runs/toy"


@dataclass
class ExperimentConfig:
    scenes: SceneSimConfig = field(default_factory=SceneSimConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    sod: SodTrainingConfig = field(default_factory=SodTrainingConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        if self.model.sample_rate != self.scenes.sample_rate:
            raise ConfigError(
                f"model sample_rate {self.model.sample_rate} != scene "
                f"sample_rate {self.scenes.sample_rate}")
        if self.training.crop_seconds > self.scenes.duration:
            raise ConfigError(
                f"crop_seconds {self.training.crop_seconds} exceeds scene "
                f"duration {self.scenes.duration}")
        # constructing the SOD config exercises its own validation
        self.sod_config()

    def sod_config(self) -> SodConfig:
        return SodConfig(input_dim=2 * self.model.encoder_dim,
                         hidden=self.sod.hidden,
                         threshold=self.sod.threshold,
                         warmup_ms=self.sod.warmup_ms,
                         seed=self.sod.seed)


_SECTIONS = {
    "scenes": SceneSimConfig,
    "model": ModelConfig,
    "loss": LossConfig,
    "training": TrainingConfig,
    "sod": SodTrainingConfig,
    "paths": PathsConfig,
}


def _build_section(cls, data: dict, section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(
            f"unknown key(s) in '{section}': {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    parts = {}
    for name, cls in _SECTIONS.items():
        parts[name] = _build_section(cls, data.get(name, {}), name)
    return ExperimentConfig(**parts)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {name: asdict(getattr(cfg, name)) for name in _SECTIONS}


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}")
    if data is None:
        data = {}
    return config_from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))
