"""Graphs, graph pairs, dataset files and synthetic data generation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

UNLABELED = -1


class GraphFormatError(ValueError):
    """A graph or pair file record could not be parsed."""


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph with optional categorical node labels.

    Edges are stored once as ``(u, v)`` with ``u < v`` and sorted. A label
    of ``-1`` marks an unlabeled node.
    """

    id: str
    node_labels: tuple[int, ...]
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        labels = tuple(int(x) for x in self.node_labels)
        n = len(labels)
        for lab in labels:
            if lab < UNLABELED:
                raise ValueError(f"graph {self.id!r}: invalid label id {lab}")
        canon = set()
        for e in self.edges:
            if len(e) != 2:
                raise ValueError(f"graph {self.id!r}: edge {e!r} is not a pair")
            u, v = int(e[0]), int(e[1])
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"graph {self.id!r}: edge ({u}, {v}) out of range for {n} nodes")
            if u == v:
                raise ValueError(f"graph {self.id!r}: self-loop on node {u}")
            key = (min(u, v), max(u, v))
            if key in canon:
                raise ValueError(f"graph {self.id!r}: duplicate edge {key}")
            canon.add(key)
        object.__setattr__(self, "node_labels", labels)
        object.__setattr__(self, "edges", tuple(sorted(canon)))

    @property
    def num_nodes(self) -> int:
        return len(self.node_labels)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def is_labeled(self) -> bool:
        return any(lab != UNLABELED for lab in self.node_labels)

    def adjacency(self) -> np.ndarray:
        n = self.num_nodes
        a = np.zeros((n, n), dtype=np.float64)
        for u, v in self.edges:
            a[u, v] = a[v, u] = 1.0
        return a

    def neighbors(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        return nbrs

    def is_connected(self) -> bool:
        n = self.num_nodes
        if n == 0:
            return True
        nbrs = self.neighbors()
        seen = {0}
        stack = [0]
        while stack:
            for w in nbrs[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == n

    def permuted(self, perm: Sequence[int], new_id: Optional[str] = None) -> "Graph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = list(perm)
        if sorted(perm) != list(range(self.num_nodes)):
            raise ValueError("perm must be a permutation of the node indices")
        labels = [0] * self.num_nodes
        for i, p in enumerate(perm):
            labels[p] = self.node_labels[i]
        edges = [(perm[u], perm[v]) for u, v in self.edges]
        return Graph(new_id or self.id, tuple(labels), tuple(edges))

    def to_record(self) -> dict:
        return {"id": self.id, "labels": list(self.node_labels), "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_record(cls, rec: dict) -> "Graph":
        return cls(str(rec["id"]), tuple(rec["labels"]), tuple(tuple(e) for e in rec["edges"]))


def normalize_ged(ged: float, g1: Graph, g2: Graph) -> float:
    """Map a GED onto [0, 1] by dividing by max node count plus max edge count."""
    if ged < 0:
        raise ValueError(f"ged must be non-negative, got {ged}")
    denom = ged_denominator(g1, g2)
    return ged / denom


def ged_denominator(g1: Graph, g2: Graph) -> int:
    denom = max(g1.num_nodes, g2.num_nodes) + max(g1.num_edges, g2.num_edges)
    if denom <= 0:
        raise ValueError("normalization undefined for two empty graphs")
    return denom


@dataclass(frozen=True)
class GraphPair:
    """Two graphs with their exact GED. ``g1`` is always the smaller graph."""

    g1: Graph
    g2: Graph
    ged: int

    def __post_init__(self):
        if self.ged < 0:
            raise ValueError(f"ged must be non-negative, got {self.ged}")
        object.__setattr__(self, "ged", int(self.ged))
        if self.g1.num_nodes > self.g2.num_nodes:
            g1, g2 = self.g2, self.g1
            object.__setattr__(self, "g1", g1)
            object.__setattr__(self, "g2", g2)

    @property
    def gt_score(self) -> float:
        return normalize_ged(self.ged, self.g1, self.g2)

    @property
    def key(self) -> tuple[str, str]:
        return (self.g1.id, self.g2.id)


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[GraphPair, ...]
    validation: tuple[GraphPair, ...]
    test: tuple[GraphPair, ...]
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: Optional[int] = None


# ---------------------------------------------------------------------------
# file I/O

def _read_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GraphFormatError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise GraphFormatError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, rec


def load_graphs(path) -> list[Graph]:
    path = Path(path)
    graphs = []
    for lineno, rec in _read_jsonl(path):
        try:
            if not isinstance(rec["labels"], list) or not isinstance(rec["edges"], list):
                raise TypeError("labels and edges must be lists")
            graphs.append(Graph.from_record(rec))
        except (KeyError, TypeError) as exc:
            raise GraphFormatError(f"{path}:{lineno}: bad graph record ({exc})") from None
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return graphs


def save_graphs(graphs: Iterable[Graph], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(json.dumps(g.to_record()) + "\n")


def load_pairs(path, graphs: Iterable[Graph]) -> list[GraphPair]:
    """Read a pair file; ``gt_score`` is recomputed from the graphs."""
    path = Path(path)
    by_id = {g.id: g for g in graphs}
    pairs = []
    for lineno, rec in _read_jsonl(path):
        try:
            g1, g2, ged = by_id[str(rec["g1"])], by_id[str(rec["g2"])], rec["ged"]
        except KeyError as exc:
            raise GraphFormatError(f"{path}:{lineno}: unknown field or graph id {exc}") from None
        if not isinstance(ged, int) or isinstance(ged, bool):
            raise GraphFormatError(f"{path}:{lineno}: ged must be an integer")
        pairs.append(GraphPair(g1, g2, ged))
    return pairs


def save_pairs(pairs: Iterable[GraphPair], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({"g1": p.g1.id, "g2": p.g2.id, "ged": p.ged}) + "\n")


# ---------------------------------------------------------------------------
# synthetic data

def generate_synthetic(
    count: int,
    n_range: Sequence[int] = (2, 10),
    edge_density: float = 0.2,
    label_count: int = 0,
    seed: int = 0,
    id_prefix: str = "g",
) -> list[Graph]:
    """Random connected graphs: a uniform random spanning tree, then every
    remaining node pair becomes an edge with probability ``edge_density``.

    ``label_count == 0`` yields unlabeled graphs.
    """
    lo, hi = int(n_range[0]), int(n_range[1])
    if not 1 <= lo <= hi:
        raise ValueError(f"invalid node range [{lo}, {hi}]")
    if not 0 < edge_density <= 1:
        raise ValueError(f"edge_density must be in (0, 1], got {edge_density}")
    if count < 0 or label_count < 0:
        raise ValueError("count and label_count must be non-negative")
    rng = np.random.default_rng(seed)
    graphs = []
    for i in range(count):
        n = int(rng.integers(lo, hi + 1))
        order = rng.permutation(n)
        edges = set()
        for k in range(1, n):
            parent = order[int(rng.integers(0, k))]
            u, v = int(order[k]), int(parent)
            edges.add((min(u, v), max(u, v)))
        for u in range(n):
            for v in range(u + 1, n):
                if (u, v) not in edges and rng.random() < edge_density:
                    edges.add((u, v))
        if label_count > 0:
            labels = tuple(int(x) for x in rng.integers(0, label_count, size=n))
        else:
            labels = (UNLABELED,) * n
        graphs.append(Graph(f"{id_prefix}{i}", labels, tuple(edges)))
    return graphs


def build_pairs(
    graphs: Sequence[Graph],
    oracle: Callable[[Graph, Graph], Optional[int]],
    max_pairs: int,
    seed: int = 0,
    progress: Optional[Callable[[int, int], None]] = None,
) -> list[GraphPair]:
    """Sample distinct unordered graph pairs and label them with ``oracle``.

    The oracle returns ``None`` when it cannot solve a pair; such pairs are
    skipped and counted in a logged warning.
    """
    n = len(graphs)
    total = n * (n - 1) // 2
    if total == 0 or max_pairs <= 0:
        return []
    rng = np.random.default_rng(seed)
    take = min(max_pairs, total)
    rows, cols = np.triu_indices(n, k=1)
    chosen = rng.permutation(total)[:take]
    pairs = []
    skipped = 0
    for idx, f in enumerate(chosen):
        a, b = graphs[rows[f]], graphs[cols[f]]
        if a.num_nodes > b.num_nodes:
            a, b = b, a
        ged = oracle(a, b)
        if ged is None:
            skipped += 1
        else:
            pairs.append(GraphPair(a, b, int(ged)))
        if progress is not None:
            progress(idx + 1, take)
    if skipped:
        logger.warning("build_pairs: skipped %d of %d pairs the oracle could not solve", skipped, take)
    return pairs


def split_dataset(
    pairs: Sequence[GraphPair],
    ratios: Sequence[float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> DatasetSplit:
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("ratios must be three positive numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n = len(pairs)
    if n < 3:
        raise ValueError(f"need at least 3 pairs to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = max(1, int(round(n * ratios[0])))
    n_val = max(1, int(round(n * ratios[1])))
    if n_train + n_val >= n:
        n_train = max(1, n - n_val - 1)
    shuffled = [pairs[i] for i in perm]
    return DatasetSplit(
        train=tuple(shuffled[:n_train]),
        validation=tuple(shuffled[n_train:n_train + n_val]),
        test=tuple(shuffled[n_train + n_val:]),
        ratios=tuple(float(r) for r in ratios),
        seed=seed,
    )
