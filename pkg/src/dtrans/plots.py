"""Figures written next to the JSON/CSV reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "dtrans",
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def training_curves(log: Sequence[dict], path: str | Path, title: str | None = None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        steps = [r["step"] for r in log]
        ax.plot(steps, [r["train_loss"] for r in log], lw=0.8, label="train")
        val = [(r["step"], r["val_loss"]) for r in log if "val_loss" in r]
        if val:
            ax.plot(*zip(*val), "o-", ms=3, lw=1.2, label="validation")
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("cross-entropy")
        ax.legend(frameon=False)
        ax2 = ax.twinx()
        ax2.plot(steps, [r["lr"] for r in log], color="0.6", lw=0.6, ls="--")
        ax2.set_ylabel("learning rate", color="0.4")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def statement_mask(mask: np.ndarray, tokens: Sequence[str], path: str | Path) -> Path:
    n = len(tokens)
    with plt.rc_context(STYLE):
        size = min(2 + 0.22 * n, 14)
        fig, ax = plt.subplots(figsize=(size, size))
        ax.imshow(mask, cmap="Greys", vmin=0, vmax=1, interpolation="nearest")
        if n <= 60:
            ax.set_xticks(range(n), tokens, rotation=90)
            ax.set_yticks(range(n), tokens)
        ax.set_title("same-statement token pairs")
        return _save(fig, path)


def bench(rows: Sequence[dict], path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ns = [r["n"] for r in rows]
        ax.plot(ns, [r["naive_median_s"] for r in rows], "o-", label="nested loops")
        ax.plot(ns, [r["vectorized_median_s"] for r in rows], "s-", label="matrix ops")
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel("tokens n")
        ax.set_ylabel("median seconds")
        ax.legend(frameon=False)
        return _save(fig, path)


def eval_summary(report: dict, path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, (left, right) = plt.subplots(1, 2, figsize=(7, 2.8))
        names = ["Exact Match", "BLEU-4", "ROUGE-L", "Localization"]
        vals = [report["exact_match_pct"], 100 * report["bleu4"], 100 * report["rouge_l"],
                report["localization_pct"]]
        left.bar(names, vals, color="0.35")
        left.set_ylim(0, 100)
        left.set_ylabel("%")
        left.tick_params(axis="x", rotation=20)
        buckets = report.get("buckets", {})
        keys = [k for k in ("0", "1", ">1") if k in buckets]
        pct = [100 * buckets[k]["exact_match"] / buckets[k]["total"] for k in keys]
        right.bar([f"{k} stmt" for k in keys], pct, color="0.6")
        right.set_ylim(0, 100)
        right.set_title("exact match by changed statements")
        return _save(fig, path)
