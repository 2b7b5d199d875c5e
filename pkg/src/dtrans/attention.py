"""Multi-head attention with absolute, relative and statement-aware relative modes.

Shapes: queries ``[B, nq, d_model]``, keys/values ``[B, nk, d_model]``.
Per-head projections are stored side by side in one ``[d_model, d_model]``
matrix (columns ``h*d_head:(h+1)*d_head`` belong to head ``h``).

Relative mode adds a learned vector ``w[clip(j - i, k) + k]`` to key j (and to
value j) when position i attends; the (2k+1)-row tables are shared by the
heads of one layer. Statement-aware mode ("dtrans") additionally adds
``stmt_k`` / ``stmt_v`` to every pair (i, j) that the statement mask marks as
belonging to the same statement. Both are evaluated without materialising
the ``[n, n, d_head]`` pair tensors:

* key side:   q_i . w[c_ij]  =  (q @ w^T)[i, c_ij]          (gather)
* value side: sum_j a_ij w[c_ij] = (bucket-sum of a_i by c_ij) @ w  (scatter)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

MODES = ("absolute", "relative", "dtrans")


class ConfigError(ValueError):
    pass


def clip(x: int, k: int) -> int:
    return max(-k, min(k, x))


def relative_index(nq: int, nk: int, k: int) -> np.ndarray:
    """Table row for each (i, j): clip(j - i, k) + k."""
    i = np.arange(nq)[:, None]
    j = np.arange(nk)[None, :]
    return np.clip(j - i, -k, k) + k


@dataclass
class AttentionMasks:
    """``key_pad``: [B, nk] bool, True for real tokens. ``statement``: [B, n, n] 0/1."""

    key_pad: np.ndarray | None = None
    causal: bool = False
    statement: np.ndarray | None = None


def init_attention(rng: np.random.Generator, d_model: int, heads: int, mode: str, k: int,
                   scale: float = 0.08) -> dict[str, Tensor]:
    if d_model % heads:
        raise ConfigError(f"d_model={d_model} is not divisible by heads={heads}")
    d_head = d_model // heads
    u = lambda *shape: rng.uniform(-scale, scale, size=shape)
    p = {name: T.parameter(u(d_model, d_model), name) for name in ("Wq", "Wk", "Wv", "Wo")}
    if mode in ("relative", "dtrans"):
        p["relK"] = T.parameter(u(2 * k + 1, d_head), "relK")
        p["relV"] = T.parameter(u(2 * k + 1, d_head), "relV")
    if mode == "dtrans":
        p["stmtK"] = T.parameter(np.zeros(d_head), "stmtK")
        p["stmtV"] = T.parameter(np.zeros(d_head), "stmtV")
    return p


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, n, d = x.shape
    return T.transpose(T.reshape(x, (B, n, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(z: Tensor) -> Tensor:
    B, h, n, dh = z.shape
    return T.reshape(T.transpose(z, (0, 2, 1, 3)), (B, n, h * dh))


def scaled_dot_attention(xq: Tensor, xkv: Tensor, params: dict[str, Tensor], heads: int,
                         masks: AttentionMasks, mode: str, k: int = 0,
                         dropout: float = 0.0, rng: np.random.Generator | None = None,
                         training: bool = False) -> tuple[Tensor, Tensor]:
    """Per-head attention outputs ``[B, h, nq, d_head]`` and weights ``[B, h, nq, nk]``."""
    if mode not in MODES:
        raise ConfigError(f"unknown attention mode {mode!r}")
    d_model = xq.shape[-1]
    if d_model % heads:
        raise ConfigError(f"d_model={d_model} is not divisible by heads={heads}")
    B, nq, _ = xq.shape
    nk = xkv.shape[1]
    d_head = d_model // heads
    if mode == "dtrans" and masks.statement is None:
        raise ConfigError("dtrans attention requires a statement mask")
    relative = mode in ("relative", "dtrans")
    if relative and nq != nk:
        raise ConfigError("relative attention is defined for self-attention only")

    q = _split_heads(T.matmul(xq, params["Wq"]), heads)
    kk = _split_heads(T.matmul(xkv, params["Wk"]), heads)
    v = _split_heads(T.matmul(xkv, params["Wv"]), heads)

    scores = T.matmul(q, T.swap_last(kk))
    if relative:
        idx = relative_index(nq, nk, k)
        qw = T.matmul(q, T.transpose(params["relK"]))  # [B,h,n,2k+1]
        scores = T.add(scores, T.gather_last(qw, idx))
    stmt = None
    if mode == "dtrans":
        stmt = np.broadcast_to(np.asarray(masks.statement, dtype=np.float64)[:, None], (B, heads, nq, nk))
        qs = T.matmul(q, T.reshape(params["stmtK"], (d_head, 1)))  # [B,h,n,1]
        scores = T.add(scores, T.mul(T.broadcast_to(qs, (B, heads, nq, nk)), T.constant(stmt)))
    scores = T.scale(scores, 1.0 / math.sqrt(d_head))

    blocked = np.zeros((B, 1, nq, nk), dtype=bool)
    if masks.key_pad is not None:
        blocked |= ~np.asarray(masks.key_pad, dtype=bool)[:, None, None, :]
    if masks.causal:
        blocked |= np.triu(np.ones((nq, nk), dtype=bool), 1)[None, None]
    if blocked.any():
        scores = T.mask_fill(scores, blocked)

    alpha = T.softmax(scores, axis=-1)
    weights = alpha
    alpha = T.dropout(alpha, dropout, rng, training)

    z = T.matmul(alpha, v)
    if relative:
        buckets = T.scatter_last(alpha, idx, 2 * k + 1)  # [B,h,n,2k+1]
        z = T.add(z, T.matmul(buckets, params["relV"]))
    if mode == "dtrans":
        same = T.sum_(T.mul(alpha, T.constant(stmt)), axis=-1, keepdims=True)  # [B,h,n,1]
        z = T.add(z, T.matmul(same, T.reshape(params["stmtV"], (1, d_head))))
    return z, weights


def multi_head(xq: Tensor, xkv: Tensor, params: dict[str, Tensor], heads: int,
               masks: AttentionMasks, mode: str, k: int = 0, dropout: float = 0.0,
               rng: np.random.Generator | None = None, training: bool = False) -> Tensor:
    """Concat(head_1..head_h) @ W_o, shape ``[B, nq, d_model]``."""
    z, _ = scaled_dot_attention(xq, xkv, params, heads, masks, mode, k, dropout, rng, training)
    return T.matmul(_merge_heads(z), params["Wo"])
