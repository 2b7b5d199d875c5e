"""Deterministic toy corpus of statement-scoped rename refactorings.

Sources are short abstracted method bodies. The edit renames every variable
(VAR_i -> VAR_{i+1}, wrapping) but only inside statements that call
``METHOD_1``; all other statements are copied verbatim. Getting it right
requires knowing which tokens share a statement with the call.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .codeprep import TokenizedExample, split_statements

N_VARS = 8
VARS = [f"VAR_{i}" for i in range(1, N_VARS + 1)]
METHODS = ["METHOD_1", "METHOD_2", "METHOD_3"]
LITERALS = ["INT_1", "INT_2", "STRING_1"]
KEYWORDS = ["int", "return", "if", "null", "new", "this"]
PUNCT = [";", "{", "}", "(", ")", "=", "+", ".", ",", "=="]
VOCABULARY = VARS + METHODS + LITERALS + KEYWORDS + PUNCT
TRIGGER = "METHOD_1"


def _statement(rng: np.random.Generator, method: str) -> list[str]:
    v = lambda: VARS[rng.integers(N_VARS)]
    lit = lambda: LITERALS[rng.integers(len(LITERALS))]
    kind = rng.integers(5)
    if kind == 0:
        return ["int", v(), "=", method, "(", v(), ")", ";"]
    if kind == 1:
        return [v(), "=", "this", ".", v(), "+", lit(), ";"]
    if kind == 2:
        return [v(), ".", method, "(", v(), ",", lit(), ")", ";"]
    if kind == 3:
        return ["return", v(), ";"]
    return ["if", "(", v(), "==", "null", ")", "{", v(), "=", "new", method, "(", ")", ";", "}"]


def apply_edit(tokens: list[str]) -> list[str]:
    out = []
    for stmt in split_statements(tokens):
        if TRIGGER in stmt:
            stmt = [VARS[(VARS.index(t) + 1) % N_VARS] if t in VARS else t for t in stmt]
        out.extend(stmt)
    return out


def generate(n: int, seed: int = 0, min_statements: int = 2, max_statements: int = 4
             ) -> list[TokenizedExample]:
    rng = np.random.default_rng(seed)
    examples = []
    while len(examples) < n:
        count = int(rng.integers(min_statements, max_statements + 1))
        calls = [METHODS[rng.integers(len(METHODS))] for _ in range(count)]
        calls[int(rng.integers(count))] = TRIGGER
        src = [t for m in calls for t in _statement(rng, m)]
        tgt = apply_edit(src)
        if tgt != src:
            examples.append(TokenizedExample(src, tgt))
    return examples


def write_corpus(directory: str | Path, n_train: int = 64, n_valid: int = 16, n_test: int = 16,
                 seed: int = 0) -> Path:
    from .data import write_split

    pool = generate(n_train + n_valid + n_test, seed)
    parts = {"train": pool[:n_train], "valid": pool[n_train:n_train + n_valid],
             "test": pool[n_train + n_valid:]}
    for split, exs in parts.items():
        write_split(directory, split, exs)
    return Path(directory)
