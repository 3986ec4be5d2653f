"""Flat CLI configuration: defaults, then JSON file, then environment, then flags."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from typing import Optional

from .exceptions import ConfigError

ENV_PREFIX = "GENATTRIB_"


@dataclass
class CliConfig:
    data_dir: str = "data/mnist"
    out: str = "out"
    cache_dir: Optional[str] = None
    preset: str = "paper"
    seed: int = 0
    jobs: int = 1
    qualities: tuple = (90, 70, 50)
    # None means "take the preset value"
    trials: Optional[int] = None
    probes: Optional[int] = None
    train_steps: Optional[int] = None
    restarts: Optional[int] = None
    inversion_steps: Optional[int] = None
    subset_size: int = 30000
    batch_size: int = 256
    train_lr: float = 0.01
    inversion_lr: float = 0.01
    loss: str = "L2"
    init: str = "uniform"
    confidence_floor: float = 0.5

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["qualities"] = list(self.qualities)
        return d

    def experiment_overrides(self) -> dict:
        inv = {"learning_rate": self.inversion_lr, "loss_kind": self.loss, "init": self.init,
               "confidence_floor": self.confidence_floor}
        if self.restarts is not None:
            inv["restarts"] = self.restarts
        if self.inversion_steps is not None:
            inv["steps"] = self.inversion_steps
        over = {"master_seed": self.seed, "qualities": tuple(self.qualities),
                "subset_size": self.subset_size, "batch_size": self.batch_size,
                "train_lr": self.train_lr, "inversion": inv}
        for key, name in (("trials", "trials"), ("probes", "probes_per_generator"),
                          ("train_steps", "train_steps")):
            if getattr(self, key) is not None:
                over[name] = getattr(self, key)
        return over


FIELDS = {f.name: f for f in dataclasses.fields(CliConfig)}


def _coerce(key: str, value):
    """Convert a string or JSON value to the type of ``key``."""
    default = FIELDS[key].default
    if value is None:
        return None
    try:
        if key == "qualities":
            items = value.split(",") if isinstance(value, str) else value
            return tuple(int(q) for q in items if str(q).strip())
        if key in ("trials", "probes", "train_steps", "restarts", "inversion_steps",
                   "seed", "jobs", "subset_size", "batch_size"):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        if key == "cache_dir" or isinstance(default, str):
            return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


def _apply(cfg: CliConfig, values: dict, source: str) -> CliConfig:
    unknown = sorted(set(values) - set(FIELDS))
    if unknown:
        raise ConfigError(f"unknown config key(s) in {source}: {', '.join(unknown)}")
    return dataclasses.replace(cfg, **{k: _coerce(k, v) for k, v in values.items()})


def env_values(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    return {k[len(ENV_PREFIX):].lower(): v for k, v in environ.items() if k.startswith(ENV_PREFIX)}


def resolve(config_path=None, flags: Optional[dict] = None, environ=None) -> CliConfig:
    cfg = CliConfig()
    if config_path:
        try:
            with open(config_path) as fh:
                values = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {config_path} is not valid JSON: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = _apply(cfg, values, str(config_path))
    cfg = _apply(cfg, env_values(environ), "environment")
    cfg = _apply(cfg, {k: v for k, v in (flags or {}).items() if v is not None}, "flags")
    if cfg.preset not in ("paper", "fast"):
        raise ConfigError(f"preset must be 'paper' or 'fast', not {cfg.preset!r}")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    return cfg
