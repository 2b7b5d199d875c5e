"""Exact match, corpus BLEU-4, ROUGE-L and statement-level edit localisation."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .codeprep import PAD, split_statements


def _strip_pad(seq: Sequence[str]) -> list[str]:
    return [t for t in seq if t != PAD]


def exact_match(pred: Sequence, gold: Sequence) -> bool:
    return _strip_pad(pred) == _strip_pad(gold)


def _ngrams(seq: Sequence, n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu4(pairs: Sequence[tuple[Sequence, Sequence]], max_n: int = 4) -> float:
    """Corpus BLEU with clipped n-gram counts pooled over all (pred, gold) pairs.

    Uniform weights 1/max_n, no smoothing: any zero pooled precision gives 0.
    Brevity penalty uses the corpus total candidate and reference lengths.
    """
    if not pairs:
        raise ValueError("bleu4 needs at least one (pred, gold) pair")
    matched = [0] * max_n
    total = [0] * max_n
    c_len = r_len = 0
    for pred, gold in pairs:
        c_len += len(pred)
        r_len += len(gold)
        for n in range(1, max_n + 1):
            cand = _ngrams(pred, n)
            ref = _ngrams(gold, n)
            matched[n - 1] += sum(min(c, ref[g]) for g, c in cand.items())
            total[n - 1] += sum(cand.values())
    if min(matched) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matched, total)) / max_n
    bp = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(log_p)


def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(pred: Sequence, gold: Sequence, beta: float = 1.2) -> float:
    """LCS F-measure; precision is over the prediction, recall over the reference."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not pred or not gold:
        return 0.0
    lcs = lcs_length(pred, gold)
    if lcs == 0:
        return 0.0
    p = lcs / len(pred)
    r = lcs / len(gold)
    b2 = beta * beta
    return (1 + b2) * r * p / (r + b2 * p)


def corpus_rouge_l(pairs: Sequence[tuple[Sequence, Sequence]], beta: float = 1.2) -> float:
    if not pairs:
        raise ValueError("rouge_l needs at least one pair")
    return sum(rouge_l(p, g, beta) for p, g in pairs) / len(pairs)


def locate_edits(src: Sequence[str], seq: Sequence[str]) -> set[int]:
    """Statement indices whose tokens differ between ``src`` and ``seq``.

    Statements are aligned by position; a statement present in only one of
    the two sequences counts as differing.
    """
    a = split_statements(list(src))
    b = split_statements(list(seq))
    diff = {i for i in range(min(len(a), len(b))) if a[i] != b[i]}
    diff.update(range(min(len(a), len(b)), max(len(a), len(b))))
    return diff


def localization_correct(src, pred, gold) -> bool:
    return locate_edits(src, pred) == locate_edits(src, gold)


def multiline_class(src: Sequence[str], gold: Sequence[str]) -> str:
    """'0', '1' or '>1' changed statements."""
    k = len(locate_edits(src, gold))
    return "0" if k == 0 else "1" if k == 1 else ">1"


def fmt_count(count: int, total: int) -> str:
    pct = 100.0 * count / total if total else 0.0
    return f"{count}/{total}({pct:.2f}%)"


@dataclass
class EvalReport:
    total: int
    exact_match: int
    bleu4: float
    rouge_l: float
    localization: int
    buckets: dict[str, dict[str, int]] = field(default_factory=dict)

    @property
    def exact_match_pct(self) -> float:
        return 100.0 * self.exact_match / self.total if self.total else 0.0

    @property
    def localization_pct(self) -> float:
        return 100.0 * self.localization / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exact_match_pct"] = self.exact_match_pct
        d["localization_pct"] = self.localization_pct
        return d

    def table(self) -> str:
        rows = [
            ("Exact Match", fmt_count(self.exact_match, self.total)),
            ("BLEU-4", f"{100 * self.bleu4:.2f}"),
            ("ROUGE-L", f"{100 * self.rouge_l:.2f}"),
            ("Localization", fmt_count(self.localization, self.total)),
        ]
        for name in ("0", "1", ">1"):
            b = self.buckets.get(name)
            if b:
                rows.append((f"EM, {name} changed stmt", fmt_count(b["exact_match"], b["total"])))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{k.ljust(width)} | {v}" for k, v in rows)


def evaluate(srcs: Sequence[Sequence[str]], preds: Sequence[Sequence[str]],
             golds: Sequence[Sequence[str]], beta: float = 1.2,
             any_of: Sequence[Sequence[Sequence[str]]] | None = None) -> EvalReport:
    """Aggregate all metrics. ``any_of`` (per-example candidate lists) switches
    exact match to "any candidate matches"; the other metrics use ``preds``."""
    if not (len(srcs) == len(preds) == len(golds)):
        raise ValueError("srcs, preds and golds must align")
    pairs = [(list(p), list(g)) for p, g in zip(preds, golds)]
    em_flags = []
    for i, (p, g) in enumerate(pairs):
        if any_of is not None:
            em_flags.append(any(exact_match(c, g) for c in any_of[i]))
        else:
            em_flags.append(exact_match(p, g))
    loc = sum(localization_correct(s, p, g) for s, (p, g) in zip(srcs, pairs))
    buckets: dict[str, dict[str, int]] = {}
    for s, (p, g), ok in zip(srcs, pairs, em_flags):
        b = buckets.setdefault(multiline_class(s, g), {"total": 0, "exact_match": 0})
        b["total"] += 1
        b["exact_match"] += int(ok)
    return EvalReport(
        total=len(pairs),
        exact_match=sum(em_flags),
        bleu4=bleu4(pairs) if pairs else 0.0,
        rouge_l=corpus_rouge_l(pairs, beta) if pairs else 0.0,
        localization=loc,
        buckets=buckets,
    )
