"""Single declarative tool configuration (YAML) with command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .datapipe import DatasetConfig
from .imagecore import DEFAULT_EPS, ClipMode
from .losses import LossWeights
from .nets import DEFAULT_VGG_LAYERS
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ToolConfig:
    # dataset
    source_dir: str | None = None
    crop_size: int = 224
    batch_size: int = 16
    seed: int = 0
    clip_mode: str = ClipMode.STRETCH.value
    recursive: bool = True
    # optimization
    gen_lr: float = 1e-3
    gen_adam_beta1: float = 0.5
    gen_adam_beta2: float = 0.999
    gen_adam_eps: float = 1e-8
    disc_lr: float | None = None
    grad_clip_norm: float = 5.0
    steps: int = 1000
    checkpoint_every: int = 500
    disc_steps_per_gen_step: int = 1
    # loss weights
    alpha: float = 0.81
    beta: float = 0.095
    gamma: float = 0.095
    # paths and misc
    vgg_weights: str | None = None
    vgg_layers: list = field(default_factory=lambda: list(DEFAULT_VGG_LAYERS))
    out_dir: str = "out"
    saturation_eps: float = DEFAULT_EPS
    study_pad: int = 16

    def dataset(self) -> DatasetConfig:
        if not self.source_dir:
            raise ConfigError("source_dir is not set")
        return DatasetConfig(source_dir=self.source_dir, crop_size=self.crop_size,
                             batch_size=self.batch_size, seed=self.seed,
                             clip_mode=ClipMode(self.clip_mode), recursive=self.recursive)

    def train(self) -> TrainConfig:
        return TrainConfig(
            gen_lr=self.gen_lr, gen_adam_beta1=self.gen_adam_beta1,
            gen_adam_beta2=self.gen_adam_beta2, gen_adam_eps=self.gen_adam_eps,
            disc_lr=self.disc_lr, grad_clip_norm=self.grad_clip_norm, steps=self.steps,
            batch_size=self.batch_size,
            loss_weights=LossWeights(self.alpha, self.beta, self.gamma),
            seed=self.seed, checkpoint_every=self.checkpoint_every,
            disc_steps_per_gen_step=self.disc_steps_per_gen_step)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))


KNOWN_KEYS = {f.name for f in dataclasses.fields(ToolConfig)}


def from_mapping(values: dict) -> ToolConfig:
    unknown = sorted(set(values) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        cfg = ToolConfig(**values)
        ClipMode(cfg.clip_mode)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def parse_override(item: str) -> tuple[str, object]:
    key, sep, raw = item.partition("=")
    if not sep:
        raise ConfigError(f"override must look like key=value, got {item!r}")
    return key.strip(), yaml.safe_load(raw)


def load_config(path=None, overrides: dict | None = None) -> ToolConfig:
    values: dict = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        values.update(loaded)
    values.update(overrides or {})
    return from_mapping(values)
