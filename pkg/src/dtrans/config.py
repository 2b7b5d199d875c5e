"""Flat run configuration: defaults < JSON config file < command-line flags."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .attention import ConfigError
from .model import ModelConfig
from .train import TrainConfig


@dataclass
class RunConfig:
    # model
    mode: str = "dtrans"
    layers: int = 6
    heads: int = 8
    d_model: int = 512
    d_ff: int = 2048
    dropout: float = 0.1
    k: int = 32
    max_len: int = 512
    label_smoothing: float = 0.0
    attention_dropout: bool = True
    init_scale: float = 0.08
    # training
    batch_size: int = 32
    max_steps: int = 20000
    patience: int = 2000
    valid_interval: int = 100
    seed: int = 0
    warmup: int = 4000
    lr_factor: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    min_count: int = 1
    # decoding / evaluation
    beam: int = 10
    max_decode_len: int = 200
    length_penalty: float = 0.0
    rouge_beta: float = 1.2
    match_any_of_beam: bool = False
    # paths
    data: str | None = None
    checkpoint: str | None = None
    idioms: str | None = None
    out: str | None = None
    raw: bool = False

    def model_config(self, vocab_size: int) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        d = {k: v for k, v in asdict(self).items() if k in names}
        d["vocab_size"] = vocab_size
        return ModelConfig(**d).validate()

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names}).validate()

    def validate(self) -> "RunConfig":
        ModelConfig.validate(self.model_config(1))
        self.train_config()
        if self.beam < 1 or self.max_decode_len < 1 or self.min_count < 1 or self.rouge_beta <= 0:
            raise ConfigError("beam, max_decode_len, min_count must be >= 1 and rouge_beta > 0")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def field_types() -> dict[str, type]:
    hints = {"int": int, "float": float, "bool": bool, "str": str}
    out = {}
    for f in fields(RunConfig):
        t = str(f.type).split("|")[0].strip()
        out[f.name] = hints.get(t, str)
    return out


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Merge a flat JSON object and explicit overrides onto the defaults."""
    values: dict = {}
    if path is not None:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be one flat JSON object")
        values.update(data)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    types = field_types()
    for key, val in values.items():
        want = types[key]
        if val is None:
            continue
        if want is float and isinstance(val, int) and not isinstance(val, bool):
            values[key] = float(val)
        elif want is bool and not isinstance(val, bool):
            raise ConfigError(f"{key} must be true/false, got {val!r}")
        elif want is int and (isinstance(val, bool) or not isinstance(val, int)):
            raise ConfigError(f"{key} must be an integer, got {val!r}")
        elif want is str and not isinstance(val, str):
            raise ConfigError(f"{key} must be a string, got {val!r}")
    return RunConfig(**values).validate()
