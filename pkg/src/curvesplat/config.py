"""Training configuration: JSON or ``key = value`` text.

Recognised keys (all optional):

    iterations            int      training iterations (default 3000)
    seed                  int      RNG seed for frame order (default 0)
    threads               int      tile worker threads (default 1)
    sh_degree             int      spherical-harmonic degree 0-3 (default 0)
    sky_resolution        int      cube map face size (default 8)
    prune_interval        int      prune every N iterations, 0 disables (500)
    prune_threshold       float    opacity below which primitives go (0.005)
    checkpoint_interval   int      0 writes only the final checkpoint (0)
    spatial_lr_scale      float    multiplies position-like rates; "extent"
                                   (the default) uses the dataset's scene
                                   extent, as position rates are in metres
    lr_final_ratio        float    end/start ratio of the position decay (0.01)
    lambda_r, lambda_d, lambda_o_sky, lambda_icc, lambda_dr, lambda_v
                          float    loss weights
    lr.<group>            float    per-group learning rate, e.g. lr.center

Defaults match optim.DEFAULT_LR and losses.LossWeights.  Adam uses
epsilon 1e-15.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .losses import LossWeights
from .optim import DEFAULT_LR


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 3000
    seed: int = 0
    threads: int = 1
    sh_degree: int = 0
    sky_resolution: int = 8
    prune_interval: int = 500
    prune_threshold: float = 0.005
    checkpoint_interval: int = 0
    spatial_lr_scale: float | None = None  # None: scene extent
    lr_final_ratio: float = 0.01
    weights: LossWeights = field(default_factory=LossWeights)
    lr: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("weights", "lr")}
        d.update(asdict(self.weights))
        d.update({f"lr.{k}": v for k, v in sorted(self.lr.items())})
        return d

    def replace(self, **kw) -> "TrainConfig":
        d = self.to_dict()
        d.update(kw)
        return config_from_dict(d)


_WEIGHT_KEYS = {f.name for f in fields(LossWeights)}
_SCALAR_KEYS = {f.name: f.type for f in fields(TrainConfig) if f.name not in ("weights", "lr")}


def config_from_dict(d: dict) -> TrainConfig:
    cfg = TrainConfig()
    weights = asdict(cfg.weights)
    lr = {}
    for key, value in d.items():
        if key in _WEIGHT_KEYS:
            weights[key] = float(value)
        elif key.startswith("lr."):
            group = key[3:]
            if group not in DEFAULT_LR:
                raise ConfigError(f"unknown learning-rate group '{group}'")
            lr[group] = float(value)
        elif key == "lr" and isinstance(value, dict):
            for group, v in value.items():
                if group not in DEFAULT_LR:
                    raise ConfigError(f"unknown learning-rate group '{group}'")
                lr[group] = float(v)
        elif key == "weights" and isinstance(value, dict):
            for k, v in value.items():
                if k not in _WEIGHT_KEYS:
                    raise ConfigError(f"unknown loss weight '{k}'")
                weights[k] = float(v)
        elif key == "spatial_lr_scale" and (value is None or str(value).strip().lower() in ("extent", "none")):
            cfg.spatial_lr_scale = None
        elif key in _SCALAR_KEYS:
            kind = int if _SCALAR_KEYS[key] in (int, "int") else float
            try:
                setattr(cfg, key, kind(value))
            except (TypeError, ValueError):
                raise ConfigError(f"bad value for {key}: {value!r}") from None
        else:
            raise ConfigError(f"unknown config key '{key}'")
    cfg.weights = LossWeights(**weights)
    cfg.lr = lr
    if cfg.iterations < 0:
        raise ConfigError("iterations must be >= 0")
    return cfg


def parse_config_text(text: str) -> TrainConfig:
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            return config_from_dict(json.loads(stripped))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from None
    d = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        d[k] = v
    return config_from_dict(d)


def load_config(path: str) -> TrainConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())
