"""Similarity and retrieval metrics on the GED scale."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .graph import Graph


def _pair_arrays(pred, true) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(true, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    if p.size == 0:
        raise ValueError("metrics need at least one item")
    return p, t


def mae(pred_geds, true_geds) -> float:
    p, t = _pair_arrays(pred_geds, true_geds)
    return float(np.mean(np.abs(p - t)))


def round_half_away(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def accuracy(pred_geds, true_geds) -> float:
    """Fraction of predictions that round (half away from zero) to the true GED."""
    p, t = _pair_arrays(pred_geds, true_geds)
    return float(np.mean(round_half_away(p) == t))


def is_degenerate(x, y) -> bool:
    x, y = _pair_arrays(x, y)
    return bool(np.all(x == x[0]) or np.all(y == y[0]))


def spearman_rho(x, y) -> float:
    """Pearson correlation of average ranks; 0.0 when either side is constant."""
    x, y = _pair_arrays(x, y)
    if x.size < 2:
        raise ValueError("rank correlation needs at least 2 items")
    if is_degenerate(x, y):
        return 0.0
    rx = rankdata(x) - (x.size + 1) / 2.0
    ry = rankdata(y) - (y.size + 1) / 2.0
    return float(np.clip(np.dot(rx, ry) / np.sqrt(np.dot(rx, rx) * np.dot(ry, ry)), -1.0, 1.0))


def kendall_tau(x, y) -> float:
    """Kendall tau-b; 0.0 when either side is constant."""
    x, y = _pair_arrays(x, y)
    if x.size < 2:
        raise ValueError("rank correlation needs at least 2 items")
    if is_degenerate(x, y):
        return 0.0
    iu = np.triu_indices(x.size, k=1)
    dx = np.sign(x[:, None] - x[None, :])[iu]
    dy = np.sign(y[:, None] - y[None, :])[iu]
    s = float(np.sum(dx * dy))
    n_x = float(np.count_nonzero(dx))
    n_y = float(np.count_nonzero(dy))
    return float(np.clip(s / np.sqrt(n_x * n_y), -1.0, 1.0))


def precision_at_k(pred_geds, true_geds, k: int, ids: Optional[Sequence] = None) -> float:
    """Overlap of the predicted and true k nearest items, divided by k.

    Smaller GED ranks first. The true set includes every item tied with
    the k-th true GED; the predicted set is exactly k items, ties broken by
    ``ids`` (default: position).
    """
    p, t = _pair_arrays(pred_geds, true_geds)
    n = p.size
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must be within 1..{n}")
    keys = np.arange(n) if ids is None else np.asarray(ids)
    if keys.shape != (n,):
        raise ValueError("ids must have one entry per item")
    tie = np.argsort(keys, kind="stable")
    rank_of = np.empty(n, dtype=np.int64)
    rank_of[tie] = np.arange(n)
    pred_top = np.lexsort((rank_of, p))[:k]
    kth = np.sort(t)[k - 1]
    true_top = np.flatnonzero(t <= kth)
    return len(np.intersect1d(pred_top, true_top)) / k


GedPredictor = Callable[[Graph, Sequence[Graph]], np.ndarray]
GedOracle = Callable[[Graph, Graph], int]


def run_ranking_eval(
    predict: GedPredictor,
    true_ged: GedOracle,
    corpus: Sequence[Graph],
    queries: Sequence[Graph],
    k_list: Sequence[int] = (10, 20),
    n_candidates: int = 100,
    seed: int = 0,
    exclude: Optional[set] = None,
) -> dict:
    """Rank sampled candidates per query by predicted GED and score the ranking.

    ``exclude`` holds ``frozenset({id_a, id_b})`` pairs that must not be
    used as query/candidate combinations (e.g. training pairs).
    """
    if n_candidates < 2:
        raise ValueError("need at least 2 candidates")
    if any(k > n_candidates for k in k_list):
        raise ValueError(f"k values {list(k_list)} exceed the candidate count {n_candidates}")
    rng = np.random.default_rng(seed)
    exclude = exclude or set()
    per_query = []
    for q in queries:
        pool = [c for c in corpus if c.id != q.id and frozenset((q.id, c.id)) not in exclude]
        if len(pool) < n_candidates:
            raise ValueError(
                f"query {q.id!r}: only {len(pool)} eligible candidates, need {n_candidates}"
            )
        picks = rng.choice(len(pool), size=n_candidates, replace=False)
        cands = [pool[i] for i in picks]
        truth = np.array([true_ged(q, c) for c in cands], dtype=np.float64)
        pred = np.asarray(predict(q, cands), dtype=np.float64)
        ids = [c.id for c in cands]
        row = {
            "query": q.id,
            "rho": spearman_rho(pred, truth),
            "tau": kendall_tau(pred, truth),
            "degenerate": is_degenerate(pred, truth),
        }
        for k in k_list:
            row[f"p@{k}"] = precision_at_k(pred, truth, k, ids=ids)
        per_query.append(row)
    keys = ["rho", "tau"] + [f"p@{k}" for k in k_list]
    mean = {key: float(np.mean([r[key] for r in per_query])) for key in keys} if per_query else {}
    return {"per_query": per_query, "mean": mean}
