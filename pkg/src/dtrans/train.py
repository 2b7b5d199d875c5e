"""Adam + inverse-square-root warm-up training with validation early stopping."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ckpt
from .attention import ConfigError
from .codeprep import TokenizedExample, Vocabulary
from .data import bucket_batches, make_batch
from .model import ModelConfig, Transformer
from .tensor import no_grad

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
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

    def validate(self) -> "TrainConfig":
        for name in ("batch_size", "max_steps", "patience", "valid_interval", "warmup"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.patience > self.max_steps:
            raise ConfigError(f"patience {self.patience} exceeds max_steps {self.max_steps}")
        if self.lr_factor < 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.adam_eps <= 0:
            raise ConfigError("invalid optimiser settings")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def noam_lr(step: int, d_model: int, warmup: int, factor: float = 1.0) -> float:
    if step < 1:
        raise ValueError("step counts from 1")
    return factor * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.98, eps: float = 1e-9) -> None:
    """In-place Adam update with bias correction; clears gradients afterwards."""
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise TrainingDiverged(f"non-finite gradient in parameter {name!r} at step {state.step + 1}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None


def batch_loss(model: Transformer, examples: Sequence[TokenizedExample], vocab: Vocabulary,
               batch_size: int = 64) -> float:
    """Token-weighted mean loss over ``examples`` (no dropout, no graph)."""
    total, tokens = 0.0, 0
    with no_grad():
        for i in range(0, len(examples), batch_size):
            chunk = examples[i:i + batch_size]
            b = make_batch(chunk, vocab)
            n = int((b.tgt_out != 0).sum())
            total += model.forward_loss(b).item() * n
            tokens += n
    return total / max(tokens, 1)


@dataclass
class TrainResult:
    best_step: int
    best_val_loss: float
    best_params: dict[str, np.ndarray]
    log: list[dict]
    stopped_early: bool
    last_step: int


class Trainer:
    """Owns model, optimiser state, RNG and the epoch cursor so runs can resume."""

    def __init__(self, model: Transformer, vocab: Vocabulary, train: Sequence[TokenizedExample],
                 valid: Sequence[TokenizedExample], config: TrainConfig):
        if not train:
            raise ValueError("training split is empty")
        if not valid:
            raise ValueError("validation split is empty")
        self.model = model
        self.vocab = vocab
        self.train = list(train)
        self.valid = list(valid)
        self.config = config.validate()
        self.rng = np.random.default_rng(config.seed)
        self.adam = AdamState()
        self.epoch: list[list[int]] = []
        self.cursor = 0
        self.best_val = math.inf
        self.best_step = 0
        self.best_params: dict[str, np.ndarray] = {}
        self.log: list[dict] = []

    @property
    def step(self) -> int:
        return self.adam.step

    def _next_batch(self) -> list[int]:
        if self.cursor >= len(self.epoch):
            self.epoch = bucket_batches(self.train, self.config.batch_size, self.rng)
            self.cursor = 0
        idx = self.epoch[self.cursor]
        self.cursor += 1
        return idx

    def train_step(self) -> dict:
        c = self.config
        idx = self._next_batch()
        batch = make_batch([self.train[i] for i in idx], self.vocab)
        loss = self.model.forward_loss(batch, rng=self.rng, training=True)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(f"loss became {value} at step {self.step + 1}")
        loss.backward()
        lr = noam_lr(self.step + 1, self.model.config.d_model, c.warmup, c.lr_factor)
        adam_step(self.model.params, self.adam, lr, c.beta1, c.beta2, c.adam_eps)
        return {"step": self.step, "lr": lr, "train_loss": value}

    def validate(self) -> float:
        return batch_loss(self.model, self.valid, self.vocab)

    def run(self, log_path: str | Path | None = None, best_path: str | Path | None = None,
            last_path: str | Path | None = None, until: int | None = None,
            on_record: Callable[[dict], None] | None = None) -> TrainResult:
        """Train until ``max_steps`` (or ``until``), patience exhaustion, or divergence.

        Validation runs every ``valid_interval`` steps; training stops at the
        first validation step at least ``patience`` steps past the best one.
        """
        c = self.config
        stop_at = min(c.max_steps, until) if until is not None else c.max_steps
        sink = open(log_path, "a", encoding="utf-8") if log_path else None
        stopped = False
        try:
            while self.step < stop_at:
                rec = self.train_step()
                if self.step % c.valid_interval == 0:
                    val = self.validate()
                    rec["val_loss"] = val
                    if val < self.best_val:
                        self.best_val, self.best_step = val, self.step
                        self.best_params = {k: p.data.copy() for k, p in self.model.params.items()}
                        if best_path:
                            self.save(best_path, include_state=False)
                self.log.append(rec)
                if sink:
                    sink.write(json.dumps(rec) + "\n")
                    sink.flush()
                if on_record:
                    on_record(rec)
                if "val_loss" in rec and self.step - self.best_step >= c.patience:
                    stopped = True
                    log.info("early stop at step %d (best %d)", self.step, self.best_step)
                    break
        finally:
            if sink:
                sink.close()
            if last_path:
                self.save(last_path, include_state=True)
        if not self.best_params:
            self.best_params = {k: p.data.copy() for k, p in self.model.params.items()}
        return TrainResult(self.best_step, self.best_val, self.best_params, self.log, stopped, self.step)

    # -- persistence ------------------------------------------------------
    def state_dict(self) -> dict:
        return {
            "step": self.adam.step,
            "rng": self.rng.bit_generator.state,
            "epoch": self.epoch,
            "cursor": self.cursor,
            "best_val": None if math.isinf(self.best_val) else self.best_val,
            "best_step": self.best_step,
            "train_config": asdict(self.config),
        }

    def save(self, path: str | Path, include_state: bool = True) -> None:
        extra_tensors = None
        state = None
        if include_state:
            state = self.state_dict()
            extra_tensors = {f"adam.m/{k}": v for k, v in self.adam.m.items()}
            extra_tensors.update({f"adam.v/{k}": v for k, v in self.adam.v.items()})
            extra_tensors.update({f"best/{k}": v for k, v in self.best_params.items()})
        ckpt.save(path, self.model, self.vocab, state, extra_tensors,
                  extra={"step": self.step, "best_step": self.best_step})

    @classmethod
    def resume(cls, path: str | Path, train, valid, config: TrainConfig | None = None) -> "Trainer":
        bundle = ckpt.load(path)
        if bundle.train_state is None:
            raise ckpt.CheckpointError(f"{path} carries no training state")
        st = bundle.train_state
        config = config or TrainConfig(**st["train_config"])
        params = {k: v for k, v in bundle.tensors.items() if "/" not in k}
        from . import tensor as T

        model = Transformer(bundle.config, {k: T.parameter(v, k) for k, v in params.items()})
        tr = cls(model, bundle.vocab, train, valid, config)
        tr.rng.bit_generator.state = st["rng"]
        tr.adam.step = st["step"]
        tr.adam.m = {k[len("adam.m/"):]: v.copy() for k, v in bundle.tensors.items() if k.startswith("adam.m/")}
        tr.adam.v = {k[len("adam.v/"):]: v.copy() for k, v in bundle.tensors.items() if k.startswith("adam.v/")}
        tr.best_params = {k[len("best/"):]: v.copy() for k, v in bundle.tensors.items() if k.startswith("best/")}
        tr.epoch = [list(b) for b in st["epoch"]]
        tr.cursor = st["cursor"]
        tr.best_val = math.inf if st["best_val"] is None else st["best_val"]
        tr.best_step = st["best_step"]
        return tr
