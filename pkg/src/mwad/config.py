"""Flat run configuration shared by the harness and the command line.

Config files hold one ``key = value`` per line; ``#`` starts a comment. Keys
are the :class:`RunConfig` field names (dashes and underscores both accepted).
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields

from .dataset import Schema, SplitSpec
from .errors import ValidationError
from .training import TrainConfig

OUT_DIR_ENV = "MWAD_OUT_DIR"


@dataclass(frozen=True)
class RunConfig:
    data: str | None = None
    timestamp_column: str = "timestamp"
    label_column: str = "label"
    exclude: tuple = ()
    train_ratio: float = 0.7
    window_mode: str = "adaptive"
    w1: int = 15
    leaky_slope: float = 0.2
    activation: str = "sigmoid"
    w2: int = 11
    hidden: int = 32
    learning_rate: float = 1e-2
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "adam"
    gradient_clip: float | None = 5.0
    shuffle: bool = False
    threshold_policy: str = "mean"
    score_target: str = "reshaped"
    out_dir: str = "runs"
    jobs: int = 1

    def __post_init__(self):
        if self.window_mode not in ("adaptive", "manual", "none"):
            raise ValidationError(f"window_mode must be adaptive, manual or none, got {self.window_mode!r}")
        if self.score_target not in ("reshaped", "raw"):
            raise ValidationError(f"score_target must be 'reshaped' or 'raw', got {self.score_target!r}")
        if self.threshold_policy not in ("mean", "best_f1_in_range"):
            raise ValidationError(f"unknown threshold_policy {self.threshold_policy!r}")
        if self.activation not in ("sigmoid", "identity"):
            raise ValidationError(f"unknown activation {self.activation!r}")
        for name in ("w1", "w2", "hidden", "epochs", "batch_size", "jobs"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        SplitSpec(self.train_ratio)

    @property
    def schema(self):
        return Schema(self.timestamp_column, self.label_column)

    @property
    def split(self):
        return SplitSpec(self.train_ratio)

    @property
    def train_config(self):
        return TrainConfig(self.learning_rate, self.epochs, self.batch_size, self.seed,
                           self.optimizer, self.gradient_clip, self.shuffle)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["exclude"] = list(self.exclude)
        return d


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def coerce(key, raw):
    """Convert a string from a config file or flag to the field's type."""
    key = key.strip().replace("-", "_")
    if key not in FIELD_TYPES:
        raise ValidationError(f"unknown config key {key!r}")
    kind = FIELD_TYPES[key]
    if not isinstance(raw, str):
        return key, raw
    text = raw.strip()
    try:
        if key == "exclude":
            return key, tuple(c.strip() for c in text.split(",") if c.strip())
        if kind == "bool":
            if text.lower() in ("1", "true", "yes", "on"):
                return key, True
            if text.lower() in ("0", "false", "no", "off"):
                return key, False
            raise ValueError(text)
        if kind == "int":
            return key, int(text)
        if kind == "float":
            return key, float(text)
        if kind == "float | None":
            return key, None if text.lower() in ("none", "") else float(text)
        if kind == "str | None":
            return key, text or None
        return key, text
    except ValueError:
        raise ValidationError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        key, value = coerce(key, value)
        values[key] = value
    return values


def load_config_file(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), str(path))


def resolve(file_values=None, overrides=None, env=None):
    """Built-in defaults, then the environment's output directory, then the
    config file, then command-line overrides."""
    env = os.environ if env is None else env
    merged = {}
    if env.get(OUT_DIR_ENV):
        merged["out_dir"] = env[OUT_DIR_ENV]
    merged.update(file_values or {})
    for key, value in (overrides or {}).items():
        if value is not None:
            key, value = coerce(key, value)
            merged[key] = value
    return RunConfig(**merged)


def dump_config(cfg):
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, list):
            value = ",".join(value)
        lines.append(f"{key} = {'' if value is None else value}")
    return "\n".join(lines) + "\n"
