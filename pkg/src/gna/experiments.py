"""End-to-end pipelines shared by the CLI and the acceptance suite."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .ged import exact_ged
from .graph import DatasetSplit, Graph, GraphPair, build_pairs, generate_synthetic, split_dataset
from .metrics import accuracy, mae, run_ranking_eval
from .model import GNAModel
from .trainer import TrainConfig, TrainResult, train

logger = logging.getLogger(__name__)

VARIANTS = {
    "full": {},
    "no-gs": {"no_gumbel_sinkhorn": True},
    "no-pad": {"no_add_delete_cost": True},
}


class GedCache:
    """Exact-GED oracle memoized on unordered id pairs; ``None`` when over budget."""

    def __init__(self, budget: Optional[int] = 200_000, known: Sequence[GraphPair] = ()):
        self.budget = budget
        self._table: dict[frozenset, Optional[int]] = {}
        for p in known:
            self._table[frozenset(p.key)] = p.ged

    def __call__(self, a: Graph, b: Graph) -> Optional[int]:
        key = frozenset((a.id, b.id))
        if key not in self._table:
            self._table[key] = exact_ged(a, b, budget=self.budget).ged
        return self._table[key]

    def strict(self, a: Graph, b: Graph) -> int:
        ged = self(a, b)
        if ged is None:
            raise RuntimeError(f"exact GED of ({a.id}, {b.id}) exceeded the search budget")
        return ged


@dataclass
class DataConfig:
    count: int = 200
    n_min: int = 4
    n_max: int = 8
    density: float = 0.15
    labels: int = 3
    pairs: int = 10_000
    seed: int = 0


def derive_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def generate_dataset(data: DataConfig, oracle: GedCache) -> tuple[list[Graph], list[GraphPair]]:
    graph_seed, pair_seed = derive_seeds(data.seed, 2)
    graphs = generate_synthetic(data.count, (data.n_min, data.n_max), data.density, data.labels, seed=graph_seed)
    pairs = build_pairs(graphs, oracle, data.pairs, seed=pair_seed)
    return graphs, pairs


def evaluate(
    model: GNAModel,
    split: DatasetSplit,
    corpus: Sequence[Graph],
    oracle: GedCache,
    queries: int = 30,
    candidates: int = 60,
    k_list: Sequence[int] = (10, 20),
    seed: int = 0,
) -> dict:
    """Test-pair MAE/accuracy plus the query-ranking protocol.

    Queries are drawn from the corpus; query/candidate combinations seen in
    training are excluded from the candidate pools.
    """
    test = list(split.test)
    if not test:
        raise ValueError("evaluate: empty test split")
    if queries > len(corpus):
        raise ValueError(f"asked for {queries} queries from a corpus of {len(corpus)} graphs")
    pred = model.predict_geds(test)
    true = np.array([p.ged for p in test], dtype=np.float64)
    const = float(np.mean([p.ged for p in split.train])) if split.train else float(np.mean(true))
    query_seed, cand_seed = derive_seeds(seed, 2)
    picks = np.random.default_rng(query_seed).choice(len(corpus), size=queries, replace=False)
    qs = [corpus[i] for i in sorted(picks)]
    seen = {frozenset(p.key) for p in split.train}

    def predict(q, cands):
        return model.predict_geds([(q, c) for c in cands])

    ranking = run_ranking_eval(predict, oracle.strict, corpus, qs, k_list, candidates, seed=cand_seed, exclude=seen)
    mean = {"mae": mae(pred, true), "accuracy": accuracy(pred, true), "const_mae": mae(np.full_like(true, const), true)}
    mean.update(ranking["mean"])
    return {"per_query": ranking["per_query"], "mean": mean, "test_pairs": len(test)}


@dataclass
class ExperimentResult:
    variant: str
    config: TrainConfig
    train: TrainResult
    metrics: dict

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "train": self.config.to_dict(),
            "best_epoch": self.train.best_epoch,
            "history": [asdict(r) for r in self.train.history],
            "per_query": self.metrics["per_query"],
            "mean": self.metrics["mean"],
        }


def run_variant(
    variant: str,
    split: DatasetSplit,
    corpus: Sequence[Graph],
    oracle: GedCache,
    cfg: TrainConfig,
    eval_kwargs: Optional[dict] = None,
    on_epoch=None,
) -> ExperimentResult:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    cfg = TrainConfig(**{**cfg.to_dict(), **VARIANTS[variant]})
    logger.info("training variant %s", variant)
    result = train(split, cfg, on_epoch=on_epoch)
    metrics = evaluate(result.model, split, corpus, oracle, **(eval_kwargs or {}))
    return ExperimentResult(variant, cfg, result, metrics)


def smoke_split(data: DataConfig, oracle: GedCache, split_seed: int = 1) -> tuple[list[Graph], DatasetSplit]:
    graphs, pairs = generate_dataset(data, oracle)
    return graphs, split_dataset(pairs, (0.6, 0.2, 0.2), seed=split_seed)
