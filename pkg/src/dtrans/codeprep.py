"""Lexing, identifier/literal abstraction, statement boundaries and vocabularies
for method-level C-family code."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

KEYWORDS = frozenset("""
abstract assert boolean break byte case catch char class const continue default do double
else enum extends final finally float for goto if implements import instanceof int interface
long native new package private protected public return short static strictfp super switch
synchronized this throw throws transient try void volatile while true false null var
""".split())

MULTI_OPS = ("==", "!=", "<=", ">=", "&&", "||", "++", "--", "->", "::", "+=", "-=", "*=", "/=")
SEPARATORS = ";,.(){}[]"
SINGLE_OPS = "<>=+-*/%!&|^~?:@"
STATEMENT_DELIMITERS = frozenset({";", "{", "}"})

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
RESERVED = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

_IDENT = re.compile(r"[A-Za-z_$][A-Za-z0-9_$]*")
_NUMBER = re.compile(
    r"0[xX][0-9A-Fa-f_]+[lL]?"
    r"|(?:\d[\d_]*\.?[\d_]*|\.\d[\d_]*)(?:[eE][+-]?\d+)?[fFdDlL]?"
)
_ABSTRACT_ID = re.compile(r"^(VAR|METHOD|STRING|CHAR|INT|FLOAT)_\d+$")


class LexError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnresolvedIdError(KeyError):
    def __init__(self, ids: Sequence[str]):
        super().__init__(f"unresolved abstract ids: {', '.join(ids)}")
        self.ids = list(ids)


@dataclass(frozen=True)
class Token:
    text: str
    kind: str  # keyword | identifier | literal | separator | operator


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        if c in "\"'":
            j = i + 1
            while j < n and source[j] != c:
                if source[j] == "\\":
                    j += 1
                elif source[j] == "\n":
                    break
                j += 1
            if j >= n or source[j] != c:
                kind = "string" if c == '"' else "char"
                raise LexError(f"unterminated {kind} literal", i)
            tokens.append(Token(source[i:j + 1], "literal"))
            i = j + 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            m = _NUMBER.match(source, i)
            tokens.append(Token(m.group(0), "literal"))
            i = m.end()
            continue
        m = _IDENT.match(source, i)
        if m:
            text = m.group(0)
            tokens.append(Token(text, "keyword" if text in KEYWORDS else "identifier"))
            i = m.end()
            continue
        two = source[i:i + 2]
        if two in MULTI_OPS:
            tokens.append(Token(two, "operator"))
            i += 2
            continue
        if c in SEPARATORS:
            tokens.append(Token(c, "separator"))
        elif c in SINGLE_OPS:
            tokens.append(Token(c, "operator"))
        else:
            raise LexError(f"unexpected character {c!r}", i)
        i += 1
    return tokens


def _literal_category(text: str) -> str:
    if text.startswith('"'):
        return "STRING"
    if text.startswith("'"):
        return "CHAR"
    body = text.lower().rstrip("l")
    if body.startswith("0x"):
        return "INT"
    if any(ch in body for ch in ".e") or body.endswith(("f", "d")):
        return "FLOAT"
    return "INT"


@dataclass
class AbstractionMap:
    """original lexeme <-> typed id, for one example (shared by src and tgt)."""

    forward: dict[str, str] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=dict)
    idioms: frozenset[str] = frozenset()

    def assign(self, lexeme: str, category: str) -> str:
        if lexeme in self.forward:
            return self.forward[lexeme]
        k = self.counters.get(category, 0) + 1
        self.counters[category] = k
        ident = f"{category}_{k}"
        self.forward[lexeme] = ident
        return ident

    @property
    def inverse(self) -> dict[str, str]:
        return {v: k for k, v in self.forward.items()}

    def to_json(self) -> str:
        return json.dumps(self.inverse, sort_keys=False, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "AbstractionMap":
        inv = json.loads(line)
        amap = cls()
        for ident, lexeme in inv.items():
            amap.forward[lexeme] = ident
            cat, num = ident.rsplit("_", 1)
            amap.counters[cat] = max(amap.counters.get(cat, 0), int(num))
        return amap


def abstract(tokens: Sequence[Token], idioms: Iterable[str] = (),
             amap: AbstractionMap | None = None) -> tuple[list[str], AbstractionMap]:
    """Replace identifiers and literals with typed, numbered ids.

    An identifier directly followed by ``(`` is a METHOD, otherwise a VAR.
    Pass an existing ``amap`` to continue numbering (target side of a pair).
    """
    idioms = frozenset(idioms)
    if amap is None:
        amap = AbstractionMap(idioms=idioms)
    out: list[str] = []
    for pos, tok in enumerate(tokens):
        if tok.kind not in ("identifier", "literal") or tok.text in idioms:
            out.append(tok.text)
            continue
        if tok.kind == "literal":
            category = _literal_category(tok.text)
        else:
            nxt = tokens[pos + 1].text if pos + 1 < len(tokens) else None
            category = "METHOD" if nxt == "(" else "VAR"
        # a lexeme keeps its first id even if later used in the other role
        out.append(amap.assign(tok.text, category))
    return out, amap


def deabstract(tokens: Sequence[str], amap: AbstractionMap) -> str:
    inv = amap.inverse
    missing = [t for t in tokens if _ABSTRACT_ID.match(t) and t not in inv]
    if missing:
        raise UnresolvedIdError(list(dict.fromkeys(missing)))
    return " ".join(inv.get(t, t) for t in tokens)


def statement_boundaries(tokens: Sequence[str | Token]) -> list[int]:
    texts = [t.text if isinstance(t, Token) else t for t in tokens]
    return [1 if t in STATEMENT_DELIMITERS else 0 for t in texts]


def split_statements(tokens: Sequence[str]) -> list[list[str]]:
    """Group tokens into statements; each delimiter closes its own statement."""
    out, cur = [], []
    for t in tokens:
        cur.append(t)
        if t in STATEMENT_DELIMITERS:
            out.append(cur)
            cur = []
    if cur:
        out.append(cur)
    return out


def abstract_pair(src: str, tgt: str, idioms: Iterable[str] = ()
                  ) -> tuple[list[str], list[str], AbstractionMap]:
    """Abstract a raw (before, after) pair with one shared map, src first."""
    s, amap = abstract(tokenize(src), idioms)
    t, amap = abstract(tokenize(tgt), idioms, amap)
    return s, t, amap


@dataclass
class TokenizedExample:
    src: list[str]
    tgt: list[str]
    amap: AbstractionMap | None = None

    @property
    def boundaries(self) -> list[int]:
        return statement_boundaries(self.src)


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS_ID:
                break
            if strip and i in (PAD_ID, BOS_ID):
                continue
            out.append(self.itos[i])
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def build_vocab(corpus: Sequence[TokenizedExample], min_count: int = 1) -> Vocabulary:
    """Tokens with count >= min_count, ordered by count desc then text."""
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts: Counter[str] = Counter()
    for ex in corpus:
        counts.update(ex.src)
        counts.update(ex.tgt)
    for r in RESERVED:
        counts.pop(r, None)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(list(RESERVED) + kept)


def load_idioms(path: str | Path | None) -> frozenset[str]:
    if path is None:
        return frozenset()
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return frozenset(l.strip() for l in lines if l.strip())
