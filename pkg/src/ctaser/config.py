"""Run configuration: one flat key = value (TOML) file covering both the
model architecture and the optimizer/training recipe."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

MODEL_KINDS = ("rnn", "wf", "ef", "lf", "cta", "cta_nornn")


class ConfigError(ValueError):
    """Bad, missing, or unknown configuration key."""


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 50
    lr0: float = 1e-3
    plateau_patience: int = 10
    lr_factor: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    classes: list = field(default_factory=list)
    select: str = "loss"  # model selection: "loss" or "uar"

    def validate(self) -> None:
        for name in ("batch_size", "max_epochs", "lr0", "plateau_patience", "lr_factor", "eps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.plateau_patience >= self.max_epochs:
            raise ConfigError("plateau_patience must be smaller than max_epochs")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("beta1/beta2 must lie in (0, 1)")
        if not self.classes:
            raise ConfigError("classes must be a non-empty list of label names")
        if len(set(self.classes)) != len(self.classes):
            raise ConfigError("classes contains duplicates")
        if self.select not in ("loss", "uar"):
            raise ConfigError(f"select must be 'loss' or 'uar', got {self.select!r}")


@dataclass
class ModelConfig:
    model: str = "cta"
    streams: list = field(default_factory=lambda: ["embeddings"])
    blocks: list | None = None  # 1-based encoder block selection; None = all
    hidden: int = 256
    layers: int = 2
    dropout: float = 0.3
    heads: int = 8
    head_dim: int = 64
    share_channel_rnn: bool = False
    uniform_attention: bool = False

    def validate(self) -> None:
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if not self.streams:
            raise ConfigError("streams must be non-empty")
        unknown = [s for s in self.streams if s not in ("spectrogram", "embeddings", "text")]
        if unknown:
            raise ConfigError(f"unknown streams {unknown}")
        if self.model in ("wf", "ef", "cta", "cta_nornn") and self.streams != ["embeddings"]:
            raise ConfigError(f"model {self.model!r} consumes exactly the stacked 'embeddings' stream")
        if self.model == "rnn" and len(self.streams) != 1:
            raise ConfigError("model 'rnn' takes exactly one stream")
        if self.model == "lf":
            if len(self.streams) < 2 and not (self.streams == ["embeddings"] and (self.blocks is None or len(self.blocks) >= 2)):
                raise ConfigError("model 'lf' needs at least two streams (or >= 2 embedding blocks)")
        if self.blocks is not None:
            if not self.blocks or any(b < 1 for b in self.blocks):
                raise ConfigError("blocks must be 1-based positive indices")
            if len(set(self.blocks)) != len(self.blocks):
                raise ConfigError("blocks contains duplicates")
        for name in ("hidden", "layers", "heads", "head_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self.model)
        out.update(dataclasses.asdict(self.train))
        return out


_MODEL_FIELDS = {f.name: f for f in dataclasses.fields(ModelConfig)}
_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def config_from_dict(raw: dict) -> RunConfig:
    model_kwargs, train_kwargs = {}, {}
    for key, value in raw.items():
        if key in _MODEL_FIELDS:
            model_kwargs[key] = value
        elif key in _TRAIN_FIELDS:
            train_kwargs[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    cfg = RunConfig(model=ModelConfig(**model_kwargs), train=TrainConfig(**train_kwargs))
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return config_from_dict(raw)
