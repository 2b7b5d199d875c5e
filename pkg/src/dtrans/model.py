"""Encoder-decoder transformer built on :mod:`dtrans.tensor`."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .attention import MODES, AttentionMasks, ConfigError, init_attention, multi_head
from .codeprep import PAD_ID
from .tensor import Tensor


class InputTooLongError(ValueError):
    pass


@dataclass
class ModelConfig:
    mode: str = "dtrans"
    layers: int = 6
    heads: int = 8
    d_model: int = 512
    d_ff: int = 2048
    dropout: float = 0.1
    k: int = 32
    vocab_size: int = 0
    max_len: int = 512
    label_smoothing: float = 0.0
    attention_dropout: bool = True
    init_scale: float = 0.08

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    def validate(self) -> "ModelConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.heads < 1 or self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} must be divisible by heads={self.heads}")
        if self.layers < 0 or self.d_ff < 1 or self.k < 0 or self.max_len < 1:
            raise ConfigError("layers >= 0, d_ff >= 1, k >= 0 and max_len >= 1 are required")
        if not 0.0 <= self.dropout < 1.0 or not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("dropout and label_smoothing must lie in [0, 1)")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def sinusoid_table(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Uniform(-s, s) matrices, zero biases and statement vectors, unit LN gains."""
    config.validate()
    rng = np.random.default_rng(seed)
    d, V, s = config.d_model, config.vocab_size, config.init_scale
    u = lambda *shape: rng.uniform(-s, s, size=shape)
    p: dict[str, np.ndarray | Tensor] = {"embed": u(V, d)}

    def attn(prefix: str, mode: str):
        for name, t in init_attention(rng, d, config.heads, mode, config.k, s).items():
            p[f"{prefix}.{name}"] = t

    def ffn(prefix: str):
        p[f"{prefix}.W1"] = u(d, config.d_ff)
        p[f"{prefix}.b1"] = np.zeros(config.d_ff)
        p[f"{prefix}.W2"] = u(config.d_ff, d)
        p[f"{prefix}.b2"] = np.zeros(d)

    def ln(prefix: str):
        p[f"{prefix}.g"] = np.ones(d)
        p[f"{prefix}.b"] = np.zeros(d)

    dec_self = "absolute" if config.mode == "absolute" else "relative"
    for l in range(config.layers):
        attn(f"enc.{l}.self", config.mode)
        ln(f"enc.{l}.ln1")
        ffn(f"enc.{l}.ffn")
        ln(f"enc.{l}.ln2")
    for l in range(config.layers):
        attn(f"dec.{l}.self", dec_self)
        ln(f"dec.{l}.ln1")
        attn(f"dec.{l}.cross", "absolute")
        ln(f"dec.{l}.ln2")
        ffn(f"dec.{l}.ffn")
        ln(f"dec.{l}.ln3")
    p["out.W"] = u(d, V)
    p["out.b"] = np.zeros(V)
    return {name: v if isinstance(v, Tensor) else T.parameter(v, name) for name, v in p.items()}


@dataclass
class Batch:
    src: np.ndarray        # [B, n] int
    src_pad: np.ndarray    # [B, n] bool, True = real token
    statement: np.ndarray  # [B, n, n] 0/1, zero outside real tokens
    tgt_in: np.ndarray     # [B, m] starts with BOS
    tgt_out: np.ndarray    # [B, m] ends with EOS, PAD elsewhere

    def __len__(self) -> int:
        return self.src.shape[0]


class Transformer:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.config = config.validate()
        self.params = params if params is not None else init_params(config, seed)

    # -- helpers ----------------------------------------------------------
    def _sub(self, prefix: str) -> dict[str, Tensor]:
        cut = len(prefix) + 1
        return {n[cut:]: t for n, t in self.params.items() if n.startswith(prefix + ".")}

    def _embed(self, ids: np.ndarray) -> Tensor:
        c = self.config
        if ids.shape[1] > c.max_len:
            raise InputTooLongError(f"sequence length {ids.shape[1]} exceeds max_len {c.max_len}")
        x = T.embed_lookup(self.params["embed"], ids)
        if c.mode == "absolute":
            x = T.scale(x, math.sqrt(c.d_model))
            pe = np.broadcast_to(sinusoid_table(ids.shape[1], c.d_model), x.shape)
            x = T.add(x, T.constant(pe))
        return x

    def _sublayer(self, x: Tensor, fx: Tensor, ln: str, rng, training: bool) -> Tensor:
        fx = T.dropout(fx, self.config.dropout, rng, training)
        return T.layer_norm(T.add(x, fx), self.params[f"{ln}.g"], self.params[f"{ln}.b"])

    def _ffn(self, x: Tensor, prefix: str) -> Tensor:
        p = self.params
        h = T.relu(T.add(T.matmul(x, p[f"{prefix}.W1"]), p[f"{prefix}.b1"]))
        return T.add(T.matmul(h, p[f"{prefix}.W2"]), p[f"{prefix}.b2"])

    def _attn(self, prefix, xq, xkv, masks, mode, rng, training):
        c = self.config
        rate = c.dropout if c.attention_dropout else 0.0
        return multi_head(xq, xkv, self._sub(prefix), c.heads, masks, mode, c.k, rate, rng, training)

    # -- forward ----------------------------------------------------------
    def encode(self, src: np.ndarray, src_pad: np.ndarray | None = None,
               statement: np.ndarray | None = None, rng: np.random.Generator | None = None,
               training: bool = False) -> Tensor:
        """Memory ``[B, n, d_model]`` for source ids ``[B, n]``."""
        c = self.config
        src = np.atleast_2d(np.asarray(src, dtype=np.int64))
        if src_pad is None:
            src_pad = src != PAD_ID
        if c.mode == "dtrans" and statement is None:
            raise ConfigError("dtrans mode requires a statement mask for the encoder")
        masks = AttentionMasks(key_pad=src_pad, statement=statement if c.mode == "dtrans" else None)
        x = T.dropout(self._embed(src), c.dropout, rng, training)
        for l in range(c.layers):
            a = self._attn(f"enc.{l}.self", x, x, masks, c.mode, rng, training)
            x = self._sublayer(x, a, f"enc.{l}.ln1", rng, training)
            x = self._sublayer(x, self._ffn(x, f"enc.{l}.ffn"), f"enc.{l}.ln2", rng, training)
        return x

    def decode_forward(self, tgt_in: np.ndarray, memory: Tensor, src_pad: np.ndarray,
                       rng: np.random.Generator | None = None, training: bool = False) -> Tensor:
        """Logits ``[B, m, V]`` for every prefix position (causal)."""
        c = self.config
        tgt_in = np.atleast_2d(np.asarray(tgt_in, dtype=np.int64))
        dec_mode = "absolute" if c.mode == "absolute" else "relative"
        self_masks = AttentionMasks(key_pad=tgt_in != PAD_ID, causal=True)
        cross_masks = AttentionMasks(key_pad=src_pad)
        y = T.dropout(self._embed(tgt_in), c.dropout, rng, training)
        for l in range(c.layers):
            a = self._attn(f"dec.{l}.self", y, y, self_masks, dec_mode, rng, training)
            y = self._sublayer(y, a, f"dec.{l}.ln1", rng, training)
            a = self._attn(f"dec.{l}.cross", y, memory, cross_masks, "absolute", rng, training)
            y = self._sublayer(y, a, f"dec.{l}.ln2", rng, training)
            y = self._sublayer(y, self._ffn(y, f"dec.{l}.ffn"), f"dec.{l}.ln3", rng, training)
        return T.add(T.matmul(y, self.params["out.W"]), self.params["out.b"])

    def logits(self, batch: Batch, rng=None, training: bool = False) -> Tensor:
        memory = self.encode(batch.src, batch.src_pad, batch.statement, rng, training)
        return self.decode_forward(batch.tgt_in, memory, batch.src_pad, rng, training)

    def forward_loss(self, batch: Batch, rng: np.random.Generator | None = None,
                     training: bool = False) -> Tensor:
        """Teacher-forced token cross-entropy, PAD positions ignored."""
        if len(batch) == 0:
            raise ValueError("forward_loss needs a non-empty batch")
        logits = self.logits(batch, rng, training)
        B, m, V = logits.shape
        flat = T.reshape(logits, (B * m, V))
        targets = batch.tgt_out.reshape(-1)
        loss = T.cross_entropy(flat, targets, ignore_index=PAD_ID)
        eps = self.config.label_smoothing
        if eps > 0:
            loss = T.add(T.scale(loss, 1 - eps), T.scale(_uniform_nll(flat, targets), eps))
        return loss

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def _uniform_nll(flat: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over live rows of -1/V sum_v log p_v (label-smoothing term)."""
    live = targets != PAD_ID
    n, V = flat.shape
    count = max(int(live.sum()), 1)
    z = flat.data
    m = z.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True))
    sm = np.exp(z - lse)
    val = float(((lse - z).mean(axis=-1) * live).sum() / count)

    def backward(g):
        # d/dz of (lse - mean(z)) = softmax - 1/V
        return ((sm - 1.0 / V) * live[:, None] * (float(np.asarray(g).reshape(-1)[0]) / count),)

    return T._make(np.array(val), (flat,), backward)
