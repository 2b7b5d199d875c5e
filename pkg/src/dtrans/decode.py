"""Greedy and beam-search decoding.

Both work over a ``step_fn(prefixes) -> log-probs [len(prefixes), V]`` so the
search logic can be exercised against hand-built scoring models as well as
a trained :class:`~dtrans.model.Transformer`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .attention import ConfigError
from .codeprep import BOS_ID, EOS_ID
from .model import Transformer
from .tensor import no_grad

StepFn = Callable[[list[list[int]]], np.ndarray]


@dataclass
class Hypothesis:
    tokens: list[int]  # generated tokens, without BOS; ends with EOS when finished
    score: float       # total log-probability
    finished: bool

    def ranking_key(self, alpha: float = 0.0) -> float:
        if alpha == 0.0:
            return self.score
        return self.score / (((5.0 + len(self.tokens)) / 6.0) ** alpha)


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def model_step_fn(model: Transformer, src_ids: Sequence[int], statement: np.ndarray | None = None
                  ) -> StepFn:
    """Encode ``src_ids`` once; the returned function scores the next token of each prefix."""
    src = np.asarray(src_ids, dtype=np.int64).reshape(1, -1)
    pad = np.ones_like(src, dtype=bool)
    if model.config.mode == "dtrans" and statement is None:
        raise ConfigError("dtrans decoding needs the source statement mask")
    if statement is not None:
        statement = np.asarray(statement, dtype=np.float64).reshape(1, src.shape[1], src.shape[1])
    with no_grad():
        memory = model.encode(src, pad, statement)

    def step(prefixes: list[list[int]]) -> np.ndarray:
        b = len(prefixes)
        ids = np.array([[BOS_ID] + p for p in prefixes], dtype=np.int64)
        mem = T.constant(np.broadcast_to(memory.data, (b,) + memory.shape[1:]))
        with no_grad():
            logits = model.decode_forward(ids, mem, np.broadcast_to(pad, (b, pad.shape[1])))
        return log_softmax(logits.data[:, -1, :])

    return step


def greedy_search(step_fn: StepFn, max_len: int, eos: int = EOS_ID) -> Hypothesis:
    tokens: list[int] = []
    score = 0.0
    for _ in range(max_len):
        lp = step_fn([tokens])[0]
        tok = int(np.argmax(lp))  # first maximum = lowest token index
        tokens.append(tok)
        score += float(lp[tok])
        if tok == eos:
            return Hypothesis(tokens, score, True)
    return Hypothesis(tokens, score, False)


def beam_search_fn(step_fn: StepFn, beam: int, max_len: int, eos: int = EOS_ID,
                   alpha: float = 0.0) -> list[Hypothesis]:
    """Beam search keeping ``beam`` open hypotheses per step.

    All expansions of the open hypotheses are ranked together. An expansion
    ending in EOS is kept as finished only if it ranks within the top
    ``beam`` of its step; the best ``beam`` non-EOS expansions stay open.
    This makes ``beam=1`` identical to greedy decoding. Hypotheses still
    open at ``max_len`` are returned as unfinished. Ties go to the
    lexicographically smaller token sequence.

    With ``alpha == 0`` scores only decrease, so the search stops once
    ``beam`` finished hypotheses all score at least as well as the best
    open one.
    """
    if beam < 1 or max_len < 1:
        raise ValueError("beam and max_len must be >= 1")
    key = lambda c: (-c.ranking_key(alpha), c.tokens)
    live = [Hypothesis([], 0.0, False)]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        if not live:
            break
        if alpha == 0.0 and len(finished) >= beam:
            finished.sort(key=key)
            if live[0].score <= finished[beam - 1].score:
                break
        lp = step_fn([h.tokens for h in live])
        cands = []
        for h, row in zip(live, lp):
            for tok in range(lp.shape[1]):
                if np.isneginf(row[tok]):
                    continue
                cands.append(Hypothesis(h.tokens + [tok], h.score + float(row[tok]), tok == eos))
        cands.sort(key=key)
        finished.extend(c for c in cands[:beam] if c.finished)
        live = [c for c in cands if not c.finished][:beam]
    out = sorted(finished + live, key=key)
    return out[:beam]


def beam_search(model: Transformer, src_ids: Sequence[int], statement: np.ndarray | None = None,
                beam: int = 10, max_len: int = 100, alpha: float = 0.0) -> list[Hypothesis]:
    return beam_search_fn(model_step_fn(model, src_ids, statement), beam, max_len, alpha=alpha)


def greedy(model: Transformer, src_ids: Sequence[int], statement: np.ndarray | None = None,
           max_len: int = 100) -> Hypothesis:
    return greedy_search(model_step_fn(model, src_ids, statement), max_len)


def strip_special(tokens: Sequence[int]) -> list[int]:
    out = []
    for t in tokens:
        if t == EOS_ID:
            break
        if t != BOS_ID:
            out.append(t)
    return out
