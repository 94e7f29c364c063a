"""Run configuration: one JSON document binding every component's settings."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

from .byoa import ByoaConfig
from .data import SyntheticConfig
from .losses import ContrastiveConfig, FocalConfig, LossWeights
from .model import RGTConfig


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.004
    min_lr: float = 1e-5
    weight_decay: float = 0.05
    warmup_epochs: int = 5
    grad_clip: float = 1.0  # global gradient-norm cap; 0 disables
    cold_start_epochs: int = 1  # whole-image radiomics box while attention is untrained
    flip_prob: float = 0.5
    radiomics_momentum: float = 0.1
    radiomics_clip: float = 5.0
    bin_width: float = 25.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr <= 0 or self.min_lr < 0 or self.weight_decay < 0:
            raise ValueError("lr must be > 0; min_lr and weight_decay >= 0")
        if self.warmup_epochs < 0 or self.cold_start_epochs < 0:
            raise ValueError("warmup_epochs and cold_start_epochs must be >= 0")
        if not 0 <= self.flip_prob <= 1 or not 0 < self.radiomics_momentum <= 1:
            raise ValueError("flip_prob must be in [0, 1] and radiomics_momentum in (0, 1]")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be >= 0")
        if self.radiomics_clip <= 0 or self.bin_width <= 0:
            raise ValueError("radiomics_clip and bin_width must be > 0")


SECTIONS = {
    "model": RGTConfig,
    "byoa": ByoaConfig,
    "focal": FocalConfig,
    "contrastive": ContrastiveConfig,
    "loss": LossWeights,
    "data": SyntheticConfig,
    "train": TrainConfig,
}


@dataclass(frozen=True)
class RunConfig:
    model: RGTConfig = field(default_factory=RGTConfig)
    byoa: ByoaConfig = field(default_factory=ByoaConfig)
    focal: FocalConfig = field(default_factory=FocalConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    data: SyntheticConfig = field(default_factory=SyntheticConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    output_dir: str = "runs/default"
    data_dir: str = "data/synthetic"  # corpus written by gen-data and read by train
    priors: Optional[str] = None  # class-prior JSON; defaults to <data_dir>/priors.json

    def to_json(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def with_overrides(self, **sections) -> "RunConfig":
        """Replace fields inside sections, e.g. ``loss={"lam": 0.9}``, or top-level values."""
        doc = self.to_json()
        for key, value in sections.items():
            if key in SECTIONS and isinstance(value, dict):
                doc[key].update(value)
            else:
                doc[key] = value
        return from_dict(doc)


def _section(cls, raw, name: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key {name}.{unknown[0]}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name}: {e}") from None


def from_dict(raw: Dict[str, Any]) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]}")
    kwargs = {}
    for key, value in raw.items():
        if key in SECTIONS:
            kwargs[key] = _section(SECTIONS[key], value, key)
        elif key == "seed":
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError("seed must be an integer")
            kwargs[key] = value
        else:
            if value is not None and not isinstance(value, str):
                raise ConfigError(f"{key} must be a string")
            kwargs[key] = value
    return RunConfig(**kwargs)


def load(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}") from None
    return from_dict(raw)
