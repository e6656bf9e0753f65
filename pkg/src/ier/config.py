"""Flat JSON experiment configuration; unknown keys are rejected."""

import json
from dataclasses import asdict, dataclass, fields

from .errors import ConfigurationError


@dataclass
class ExperimentConfig:
    seed: int = 0
    # world
    k_true: int = 11
    grid_h: int = 14
    grid_w: int = 14
    c_in: int = 64
    a_in: int = 64
    sigma: float = 0.1
    volume_ratio_max: float = 10.0
    n_single: int = 400
    n_unconstrained: int = 200
    # model
    c: int = 128
    c_m: int = 64
    k: int = 25
    # training
    stage1_epochs: int = 12
    identifier_epochs: int = 12
    stage2_epochs: int = 3
    batch: int = 32
    lr: float = 1e-4
    train_audio_in_identifier: bool = False
    # referrer
    threshold_mode: int = 5
    # metrics
    zeta: float = 0.5
    iou_binarize_ratio: float = 0.5

    def validate(self):
        for name in ("k_true", "grid_h", "grid_w", "c_in", "a_in", "c", "c_m",
                     "k", "batch", "n_single", "n_unconstrained"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.threshold_mode not in (1, 2, 3, 4, 5):
            raise ConfigurationError("threshold_mode must be in 1..5")
        if self.lr <= 0:
            raise ConfigurationError("lr must be positive")
        return self

    def to_dict(self):
        return asdict(self)


def load_config(path):
    with open(path) as fh:
        data = json.load(fh)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**data).validate()
