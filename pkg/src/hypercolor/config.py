"""Training configuration."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    seed: int
    latent_dim: int = 64
    encoder_point_widths: list = field(default_factory=lambda: [64, 128])
    encoder_head_widths: list = field(default_factory=lambda: [128])
    hyper_widths: list = field(default_factory=lambda: [128])
    target_widths: list = field(default_factory=lambda: [3, 64, 64, 3])
    color_widths: list = field(default_factory=lambda: [3, 64, 64, 3])
    lam: float = 0.001
    lam2: float = 0.0
    k: int = 1
    recon_points: int = 256
    steps: int = 2000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    prior: str = "ball"
    precision: str = "f64"
    baseline_mode: bool = False
    checkpoint_every: int = 0
    hyper_init_scale: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        for name in ("latent_dim", "k", "recon_points", "steps"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        for name in ("encoder_point_widths", "encoder_head_widths", "hyper_widths",
                     "target_widths", "color_widths"):
            v = getattr(self, name)
            if not isinstance(v, (list, tuple)) or not all(
                    isinstance(w, (int, np.integer)) and w > 0 for w in v):
                raise ConfigError(f"{name} must be a list of positive integers, got {v!r}")
        if not self.encoder_point_widths:
            raise ConfigError("encoder_point_widths must not be empty")
        if len(self.target_widths) < 2 or self.target_widths[0] != 3 or self.target_widths[-1] != 3:
            raise ConfigError(f"target_widths must start and end with 3, got {self.target_widths}")
        if len(self.color_widths) < 2 or self.color_widths[0] != 3 or self.color_widths[-1] != 3:
            raise ConfigError(f"color_widths must start and end with 3, got {self.color_widths}")
        if self.lam < 0 or self.lam2 < 0:
            raise ConfigError("lam and lam2 must be >= 0")
        if self.lr <= 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.adam_eps <= 0:
            raise ConfigError("invalid Adam hyperparameters")
        if self.prior not in ("ball", "sphere"):
            raise ConfigError(f"prior must be 'ball' or 'sphere', got {self.prior!r}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be 'f32' or 'f64', got {self.precision!r}")
        if not isinstance(self.baseline_mode, bool):
            raise ConfigError("baseline_mode must be true or false")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    @classmethod
    def keys(cls):
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_dict(cls, d):
        unknown = sorted(set(d) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        if "seed" not in d:
            raise ConfigError("config must set 'seed'")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def replace(self, **changes):
        return self.from_dict({**self.to_dict(), **changes})

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def parse_override(text):
    """Parse ``key=value`` with a JSON value (bare strings are allowed)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if key not in TrainConfig.keys():
        raise ConfigError(f"unknown config key {key!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def load_config(path=None, overrides=()):
    data = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    for key, value in overrides:
        data[key] = value
    return TrainConfig.from_dict(data)
