"""Parallel-corpus IO and batching."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .codeprep import (
    BOS_ID, EOS_ID, PAD_ID, AbstractionMap, LexError, TokenizedExample, Vocabulary,
    abstract_pair, statement_boundaries,
)
from .model import Batch
from .stmtmask import mask_vectorized

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


def read_split(directory: str | Path, split: str, raw: bool = False,
               idioms: Iterable[str] = ()) -> list[TokenizedExample]:
    """Load ``<split>.src`` / ``<split>.tgt`` (and ``<split>.map`` if present).

    With ``raw=True`` each line is a code snippet that is lexed and abstracted;
    lines that fail to lex are skipped with a warning.
    """
    directory = Path(directory)
    src_lines = (directory / f"{split}.src").read_text(encoding="utf-8").splitlines()
    tgt_lines = (directory / f"{split}.tgt").read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(tgt_lines):
        raise ValueError(f"{split}: {len(src_lines)} source lines vs {len(tgt_lines)} target lines")
    map_path = directory / f"{split}.map"
    maps = map_path.read_text(encoding="utf-8").splitlines() if map_path.exists() else None
    out = []
    for lineno, (s, t) in enumerate(zip(src_lines, tgt_lines), start=1):
        if raw:
            try:
                src, tgt, amap = abstract_pair(s, t, idioms)
            except LexError as exc:
                log.warning("%s line %d skipped: %s", split, lineno, exc)
                continue
            out.append(TokenizedExample(src, tgt, amap))
        else:
            amap = AbstractionMap.from_json(maps[lineno - 1]) if maps else None
            out.append(TokenizedExample(s.split(), t.split(), amap))
    return out


def write_split(directory: str | Path, split: str, examples: Sequence[TokenizedExample],
                with_maps: bool = False) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{split}.src").write_text("".join(" ".join(e.src) + "\n" for e in examples), encoding="utf-8")
    (directory / f"{split}.tgt").write_text("".join(" ".join(e.tgt) + "\n" for e in examples), encoding="utf-8")
    if with_maps:
        (directory / f"{split}.map").write_text(
            "".join((e.amap.to_json() if e.amap else "{}") + "\n" for e in examples), encoding="utf-8")


def statement_cube(src_lengths: Sequence[int], src_tokens: Sequence[Sequence[str]], n: int) -> np.ndarray:
    cube = np.zeros((len(src_tokens), n, n))
    for b, toks in enumerate(src_tokens):
        L = src_lengths[b]
        cube[b, :L, :L] = mask_vectorized(statement_boundaries(toks[:L]))
    return cube


def make_batch(examples: Sequence[TokenizedExample], vocab: Vocabulary) -> Batch:
    """Pad a list of examples; targets are framed as BOS + tgt / tgt + EOS."""
    if not examples:
        raise ValueError("cannot batch zero examples")
    B = len(examples)
    n = max(max(len(e.src) for e in examples), 1)
    m = max(len(e.tgt) for e in examples) + 1
    src = np.full((B, n), PAD_ID, dtype=np.int64)
    tgt_in = np.full((B, m), PAD_ID, dtype=np.int64)
    tgt_out = np.full((B, m), PAD_ID, dtype=np.int64)
    for b, e in enumerate(examples):
        s = vocab.encode(e.src)
        t = vocab.encode(e.tgt)
        src[b, :len(s)] = s
        tgt_in[b, :len(t) + 1] = [BOS_ID] + t
        tgt_out[b, :len(t) + 1] = t + [EOS_ID]
    lengths = [len(e.src) for e in examples]
    pad = np.zeros((B, n), dtype=bool)
    for b, L in enumerate(lengths):
        pad[b, :L] = True
    stmt = statement_cube(lengths, [e.src for e in examples], n)
    return Batch(src=src, src_pad=pad, statement=stmt, tgt_in=tgt_in, tgt_out=tgt_out)


def bucket_batches(examples: Sequence[TokenizedExample], batch_size: int,
                   rng: np.random.Generator) -> list[list[int]]:
    """Index batches of similar source length, in shuffled batch order."""
    order = rng.permutation(len(examples))
    # stable sort of a random permutation: equal lengths stay shuffled
    order = sorted(order.tolist(), key=lambda i: len(examples[i].src))
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    perm = rng.permutation(len(batches))
    return [batches[i] for i in perm]
