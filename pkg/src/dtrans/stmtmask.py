"""Statement mask matrices: 1 where two tokens share a statement.

Token j belongs to statement g[j] = number of delimiters strictly before j,
so a delimiter closes the statement it terminates.
"""

from __future__ import annotations

import statistics
import time
from typing import Sequence

import numpy as np


def _check(indicator) -> np.ndarray:
    arr = np.asarray(indicator, dtype=np.int64).reshape(-1)
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ValueError("statement indicator must contain only 0 and 1")
    return arr


def mask_naive(indicator: Sequence[int]) -> np.ndarray:
    """Reference construction with explicit loops over every token pair."""
    ind = [int(v) for v in _check(indicator)]
    groups, g = [], 0
    for v in ind:
        groups.append(g)
        g += v
    rows = []
    for gi in groups:
        row = []
        for gj in groups:
            row.append(1 if gi == gj else 0)
        rows.append(row)
    n = len(ind)
    return np.array(rows, dtype=np.int8).reshape(n, n)


def mask_vectorized(indicator: Sequence[int]) -> np.ndarray:
    """Matrix-operation construction.

    The group index is an exclusive prefix sum (equivalent to multiplying the
    indicator row by a strictly triangular ones matrix). The index is tiled
    into ``wb``; then with d = wb - wb.T,
    ``(|d - 1| - |d| + |-d - 1| - |d|) / 2`` is 1 where d == 0 and 0 for any
    nonzero integer d.
    """
    ind = _check(indicator)
    n = ind.size
    # group ids and their differences stay within +-(n + 1)
    dt = np.int16 if n < 16000 else np.int64
    wa = np.zeros(n, dtype=dt)
    if n:
        np.cumsum(ind[:-1], out=wa[1:])
    wb = np.broadcast_to(wa, (n, n))
    wbt = wb.T
    one = dt(1)
    d = np.subtract(wb, wbt)
    ad = np.abs(d)
    ws1 = np.subtract(d, one)  # |W^B - W^BT - 1| - |W^B - W^BT|
    np.abs(ws1, out=ws1)
    ws1 -= ad
    ws2 = np.subtract(wbt, wb)  # |W^BT - W^B - 1| - |W^B - W^BT|
    ws2 -= one
    np.abs(ws2, out=ws2)
    ws2 -= ad
    ws1 += ws2
    ws1 //= dt(2)
    return ws1.astype(np.int8)


def mask_from_tokens(tokens: Sequence[str]) -> np.ndarray:
    from .codeprep import statement_boundaries

    return mask_vectorized(statement_boundaries(tokens))


def format_mask(mask: np.ndarray) -> str:
    return "\n".join("".join(str(int(v)) for v in row) for row in mask)


def mask_bench(n: int, trials: int, seed: int = 0) -> dict:
    """Median wall-clock seconds per construction for both routes."""
    if n < 1 or trials < 1:
        raise ValueError("mask_bench needs n >= 1 and trials >= 1")
    rng = np.random.default_rng(seed)
    naive, vec = [], []
    for _ in range(trials):
        ind = (rng.random(n) < 0.15).astype(np.int64)
        t0 = time.perf_counter()
        mask_naive(ind)
        t1 = time.perf_counter()
        mask_vectorized(ind)
        t2 = time.perf_counter()
        naive.append(t1 - t0)
        vec.append(t2 - t1)
    mn, mv = statistics.median(naive), statistics.median(vec)
    return {
        "n": n,
        "trials": trials,
        "naive_median_s": mn,
        "vectorized_median_s": mv,
        "speedup": mn / mv if mv > 0 else float("inf"),
    }
