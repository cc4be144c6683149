"""Run configuration: nested dataclasses read from ``section.key=value`` lines."""
from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .model import ConfigError, ModelConfig


@dataclass
class OptimConfig:
    kind: str = "adam"
    lr: float = 8e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class ScheduleConfig:
    warmup_epochs: int = 10
    decay_factor: float = 0.1
    decay_epochs: tuple[int, ...] = (30, 50)


@dataclass
class DistillSection:
    alpha: float = 1.0
    beta: float = 1.0
    temperature: float = 2.0
    feat_temperature: float = 1.0
    uniform_weights: bool = False
    teacher: str = ""


@dataclass
class TrainSection:
    epochs: int = 60
    batch_size: int = 12
    seed: int = 0
    eval_split: str = "auto"  # val if present, else test
    checkpoint_every: int = 1


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    distill: DistillSection = field(default_factory=DistillSection)
    train: TrainSection = field(default_factory=TrainSection)

    def validate(self) -> "RunConfig":
        self.model.validate()
        if self.optim.kind != "adam":
            raise ConfigError(f"unsupported optimizer {self.optim.kind!r}")
        if not self.optim.lr > 0:
            raise ConfigError(f"optim.lr must be positive, got {self.optim.lr}")
        if self.optim.weight_decay < 0:
            raise ConfigError("optim.weight_decay must be non-negative")
        if self.train.epochs < 1:
            raise ConfigError(f"train.epochs must be at least 1, got {self.train.epochs}")
        if self.train.batch_size < 1:
            raise ConfigError("train.batch_size must be at least 1")
        if not 0 <= self.schedule.warmup_epochs < self.train.epochs:
            raise ConfigError(f"schedule.warmup_epochs ({self.schedule.warmup_epochs}) must be "
                              f"below train.epochs ({self.train.epochs})")
        d = self.distill
        if not (d.temperature > 0 and d.feat_temperature > 0):
            raise ConfigError("distill temperatures must be positive")
        if d.alpha < 0 or d.beta < 0:
            raise ConfigError("distill.alpha and distill.beta must be non-negative")
        return self


SECTIONS = tuple(f.name for f in dataclasses.fields(RunConfig))


def _coerce(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    try:
        if tp is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if origin is tuple:
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(tp, '__name__', tp)}") from None


def _field_types(section) -> dict[str, type]:
    hints = typing.get_type_hints(type(section))
    return {f.name: hints[f.name] for f in dataclasses.fields(section)}


def apply_overrides(cfg: RunConfig, pairs: dict[str, str]) -> RunConfig:
    for key, raw in pairs.items():
        section_name, _, name = key.partition(".")
        if section_name not in SECTIONS or not name:
            raise ConfigError(f"unknown config key {key!r}")
        section = getattr(cfg, section_name)
        types = _field_types(section)
        if name not in types:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(section, name, _coerce(raw, types[name], key))
    return cfg


def parse_lines(text: str, source: str = "<config>") -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path: str | os.PathLike | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        apply_overrides(cfg, parse_lines(text, str(path)))
    if overrides:
        apply_overrides(cfg, overrides)
    cfg.model.__post_init__()
    return cfg.validate()


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def dump_config(cfg: RunConfig) -> str:
    """Fully resolved configuration in the same key=value format."""
    lines = []
    for section_name in SECTIONS:
        section = getattr(cfg, section_name)
        for f in dataclasses.fields(section):
            lines.append(f"{section_name}.{f.name}={_fmt(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"


def model_config_from_text(text: str) -> ModelConfig:
    cfg = RunConfig()
    apply_overrides(cfg, {k: v for k, v in parse_lines(text).items() if k.startswith("model.")})
    cfg.model.__post_init__()
    return cfg.model
