"""The graph node alignment network.

A pair ``(g1, g2)`` with ``|V1| <= |V2|`` is scored as follows:

1. a three-layer GIN embeds the nodes of both graphs;
2. ``g1`` is padded to ``|V2|`` rows with its mean-pooled embedding;
3. a bank of bilinear maps, fused by learned channel weights, gives a
   ``|V2| x |V2|`` edit-cost matrix;
4. a shared Linear-ReLU-Linear transform of both embeddings, followed by
   Gumbel-Sinkhorn, gives a doubly stochastic soft matching;
5. ``sigmoid(sum(matching * cost) + ntn_bias)`` is the normalized GED.

Everything is computed on padded mini-batches: node axes are padded to the
largest ``|V2|`` in the batch and masks keep the padding inert.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .assignment import linear_assignment, permutation_matrix
from .graph import UNLABELED, Graph, GraphPair, ged_denominator
from .tensor import Tensor

MATCHING_MODES = ("gumbel_sinkhorn", "softmax")


@dataclass
class GnaConfig:
    input_dim: int = 1
    gin_dims: tuple[int, ...] = (32, 64, 128)
    cost_layers: int = 16
    ntn_slices: int = 16
    lrl_hidden: Optional[int] = None
    tau: float = 0.1
    sinkhorn_iters: int = 20
    unlabeled_value: float = 1.0
    matching: str = "gumbel_sinkhorn"
    pad: bool = True

    def __post_init__(self):
        self.gin_dims = tuple(int(d) for d in self.gin_dims)
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if not self.gin_dims or any(d <= 0 for d in self.gin_dims):
            raise ValueError("gin_dims needs at least one positive layer width")
        if self.cost_layers < 1 or self.ntn_slices < 1:
            raise ValueError("cost_layers and ntn_slices must be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.sinkhorn_iters < 1:
            raise ValueError("sinkhorn_iters must be >= 1")
        if self.matching not in MATCHING_MODES:
            raise ValueError(f"matching must be one of {MATCHING_MODES}")

    @property
    def embed_dim(self) -> int:
        return self.gin_dims[-1]

    @property
    def hidden_dim(self) -> int:
        return self.lrl_hidden or self.embed_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gin_dims"] = list(self.gin_dims)
        return d


def init_params(config: GnaConfig, seed: int = 0) -> dict[str, Tensor]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight; GIN eps starts at 0."""
    rng = np.random.default_rng(seed)

    def uni(shape, fan_in):
        a = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-a, a, size=shape), requires_grad=True)

    p: dict[str, Tensor] = {}
    prev = config.input_dim
    for k, width in enumerate(config.gin_dims):
        p[f"gin.{k}.eps"] = Tensor(np.zeros(1), requires_grad=True)
        p[f"gin.{k}.w1"] = uni((prev, width), prev)
        p[f"gin.{k}.b1"] = uni((width,), prev)
        p[f"gin.{k}.w2"] = uni((width, width), width)
        p[f"gin.{k}.b2"] = uni((width,), width)
        prev = width
    d, h, L, K = config.embed_dim, config.hidden_dim, config.cost_layers, config.ntn_slices
    p["cost.weights"] = uni((L, d, d), d)
    p["cost.fusion"] = uni((L,), L)
    p["lrl.w1"] = uni((d, h), d)
    p["lrl.b1"] = uni((h,), d)
    p["lrl.w2"] = uni((h, d), h)
    p["lrl.b2"] = uni((d,), h)
    p["ntn.t"] = uni((K, d, d), d)
    p["ntn.v"] = uni((2 * d, K), 2 * d)
    p["ntn.b"] = uni((K,), 2 * d)
    p["ntn.w"] = uni((K,), K)
    return p


PARAM_GROUPS = ("gin", "cost", "lrl", "ntn")


# ---------------------------------------------------------------------------
# building blocks (2-D single graph or 3-D batched)

def initial_features(g: Graph, vocab_size: int, constant: float = 1.0) -> np.ndarray:
    """One-hot rows for labeled nodes, a shared constant row for unlabeled ones."""
    x = np.zeros((g.num_nodes, vocab_size))
    for i, lab in enumerate(g.node_labels):
        if lab == UNLABELED:
            x[i] = constant
        elif 0 <= lab < vocab_size:
            x[i, lab] = 1.0
        else:
            raise ValueError(f"graph {g.id!r}: label {lab} outside vocabulary of size {vocab_size}")
    return x


def gin_encode(params, feats, adj, config: GnaConfig, mask: Optional[np.ndarray] = None) -> Tensor:
    """Stacked GIN layers: ``MLP((1 + eps) h_v + sum of neighbour h_u)``.

    ``mask`` (same leading shape as ``feats`` minus the feature axis) zeroes
    padded node rows after every layer.
    """
    h = T.as_tensor(feats)
    a = T.as_tensor(adj)
    m = None if mask is None else Tensor(mask[..., None].astype(np.float64))
    for k in range(len(config.gin_dims)):
        z = T.mul(T.add(1.0, params[f"gin.{k}.eps"]), h) + T.matmul(a, h)
        z = T.relu(T.matmul(z, params[f"gin.{k}.w1"]) + params[f"gin.{k}.b1"])
        h = T.matmul(z, params[f"gin.{k}.w2"]) + params[f"gin.{k}.b2"]
        if m is not None:
            h = T.mul(h, m)
    return h


def pad_embeddings(h1: Tensor, h2: Tensor) -> Tensor:
    """Pad ``h1`` to ``h2``'s row count with copies of ``h1``'s mean row."""
    n1, n2 = h1.shape[0], h2.shape[0]
    if n1 > n2:
        raise ValueError(f"pad_embeddings: g1 has more nodes ({n1}) than g2 ({n2})")
    if n1 == n2:
        return h1
    return T.pad_rows(h1, T.mean_rows(h1), n2)


def fused_cost_weight(params) -> Tensor:
    # sum_c a_c (H W_c H2^T) == H (sum_c a_c W_c) H2^T; fuse before multiplying
    return T.einsum("c,cij->ij", params["cost.fusion"], params["cost.weights"])


def cost_channels(h1s: Tensor, h2: Tensor, params) -> Tensor:
    """All bilinear cost channels ``H1* W_c H2^T`` stacked on a leading axis."""
    return T.einsum("ni,cij,mj->cnm", h1s, params["cost.weights"], h2)


def cost_matrix(h1s: Tensor, h2: Tensor, params) -> Tensor:
    """Channel-fused edit-cost matrix."""
    return T.matmul(T.matmul(h1s, fused_cost_weight(params)), T.transpose(h2))


def lrl(h: Tensor, params) -> Tensor:
    z = T.relu(T.matmul(h, params["lrl.w1"]) + params["lrl.b1"])
    return T.matmul(z, params["lrl.w2"]) + params["lrl.b2"]


def sample_gumbel(shape, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(shape)
    return -np.log(-np.log(u + 1e-20) + 1e-20)


def gumbel_sinkhorn(
    m: Tensor,
    tau: float,
    iters: int,
    noise: bool = False,
    rng: Optional[np.random.Generator] = None,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Sinkhorn normalization of ``exp((M + G) / tau)``.

    The alternating row/column normalizations are carried out in the log
    domain (subtracting row then column log-sum-exps), which yields the
    same iterates without overflow at small ``tau``. ``mask`` marks the
    valid block of each matrix; masked entries come out as exactly 0.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    m = T.as_tensor(m)
    if not np.all(np.isfinite(m.data)):
        raise T.NonFiniteError("gumbel_sinkhorn: non-finite input scores; rescale the inputs")
    x = m
    if noise:
        if rng is None:
            raise ValueError("gumbel noise requires an rng")
        x = T.add(x, sample_gumbel(m.shape, rng))
    x = T.scale(x, 1.0 / tau)
    for _ in range(iters):
        x = T.sub(x, T.logsumexp(x, axis=-1, mask=mask))
        x = T.sub(x, T.logsumexp(x, axis=-2, mask=mask))
    if mask is None:
        return T.exp(x)
    fm = mask.astype(np.float64)
    return T.mul(T.exp(T.mul(x, fm)), fm)


def sinkhorn_direct(m: Tensor, tau: float, iters: int) -> Tensor:
    """Plain-domain Sinkhorn (``exp`` then row/column rescaling) on one matrix."""
    m = T.as_tensor(m)
    try:
        x = T.exp(T.scale(m, 1.0 / tau))
    except T.NonFiniteError:
        raise T.NonFiniteError(
            f"sinkhorn: exp(M / tau) overflowed at tau={tau}; raise tau or rescale M"
        ) from None
    for _ in range(iters):
        x = T.col_normalize(T.row_normalize(x))
    return x


def masked_row_softmax(m: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    x = T.sub(m, T.logsumexp(m, axis=-1, mask=mask))
    if mask is None:
        return T.exp(x)
    fm = mask.astype(np.float64)
    return T.mul(T.exp(T.mul(x, fm)), fm)


def matching_matrix(
    h1s: Tensor,
    h2: Tensor,
    params,
    config: GnaConfig,
    noise: bool = False,
    rng: Optional[np.random.Generator] = None,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Soft matching from the shared LRL transform of both embeddings."""
    scores = T.matmul(lrl(h1s, params), T.transpose(lrl(h2, params)))
    if config.matching == "softmax":
        return masked_row_softmax(scores, mask)
    return gumbel_sinkhorn(scores, config.tau, config.sinkhorn_iters, noise=noise, rng=rng, mask=mask)


def harden(soft) -> np.ndarray:
    """0/1 matrix of the assignment maximizing the total soft weight.

    Rectangular input is zero-padded to square first; the returned matrix
    has the input's shape, one 1 per row of the shorter side.
    """
    s = np.asarray(soft.data if isinstance(soft, Tensor) else soft, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError(f"harden: expected a matrix, got shape {s.shape}")
    r, c = s.shape
    n = max(r, c)
    sq = np.zeros((n, n))
    sq[:r, :c] = s
    col = linear_assignment(-sq)
    return permutation_matrix(col)[:r, :c]


def ntn_bias(hg1: Tensor, hg2: Tensor, params) -> Tensor:
    """Neural-tensor-network bias from the two pooled graph embeddings.

    Works on ``(d,)`` vectors or ``(B, d)`` batches.
    """
    single = hg1.ndim == 1
    if single:
        hg1 = T.reshape(hg1, (1, -1))
        hg2 = T.reshape(hg2, (1, -1))
    bil = T.einsum("bi,kij,bj->bk", hg1, params["ntn.t"], hg2)
    lin = T.matmul(T.concat([hg1, hg2], axis=1), params["ntn.v"])
    hidden = T.relu(bil + lin + params["ntn.b"])
    out = T.einsum("bk,k->b", hidden, params["ntn.w"])
    return T.reshape(out, ()) if single else out


def denormalize(score: float, g1: Graph, g2: Graph) -> float:
    return float(score) * ged_denominator(g1, g2)


# ---------------------------------------------------------------------------
# batching

@dataclass
class PairBatch:
    x1: np.ndarray
    adj1: np.ndarray
    x2: np.ndarray
    adj2: np.ndarray
    n1: np.ndarray
    n2: np.ndarray
    target: np.ndarray
    ids: list

    @property
    def size(self) -> int:
        return len(self.n1)

    @property
    def width(self) -> int:
        return self.x1.shape[1]

    def node_mask(self, which: int) -> np.ndarray:
        n = self.n1 if which == 1 else self.n2
        return np.arange(self.width)[None, :] < n[:, None]

    def pad_mask(self) -> np.ndarray:
        idx = np.arange(self.width)[None, :]
        return (idx >= self.n1[:, None]) & (idx < self.n2[:, None])

    def block_mask(self, pad: bool) -> np.ndarray:
        rows = self.n2 if pad else self.n1
        idx = np.arange(self.width)
        return (idx[None, :, None] < rows[:, None, None]) & (idx[None, None, :] < self.n2[:, None, None])


def make_batch(pairs: Sequence, config: GnaConfig) -> PairBatch:
    """Stack pairs into padded arrays; ``pairs`` may be GraphPairs or (g1, g2) tuples."""
    items = []
    for p in pairs:
        if isinstance(p, GraphPair):
            items.append((p.g1, p.g2, p.gt_score, p.key))
        else:
            g1, g2 = p
            if g1.num_nodes > g2.num_nodes:
                g1, g2 = g2, g1
            items.append((g1, g2, np.nan, (g1.id, g2.id)))
    B = len(items)
    if B == 0:
        raise ValueError("empty batch")
    N = max(it[1].num_nodes for it in items)
    M = config.input_dim
    x1 = np.zeros((B, N, M))
    x2 = np.zeros((B, N, M))
    a1 = np.zeros((B, N, N))
    a2 = np.zeros((B, N, N))
    n1 = np.zeros(B, dtype=np.int64)
    n2 = np.zeros(B, dtype=np.int64)
    tgt = np.zeros(B)
    for b, (g1, g2, score, _) in enumerate(items):
        if g1.num_nodes == 0:
            raise ValueError(f"graph {g1.id!r} has no nodes")
        n1[b], n2[b] = g1.num_nodes, g2.num_nodes
        x1[b, : n1[b]] = initial_features(g1, M, config.unlabeled_value)
        x2[b, : n2[b]] = initial_features(g2, M, config.unlabeled_value)
        a1[b, : n1[b], : n1[b]] = g1.adjacency()
        a2[b, : n2[b], : n2[b]] = g2.adjacency()
        tgt[b] = score
    return PairBatch(x1, a1, x2, a2, n1, n2, tgt, [it[3] for it in items])


@dataclass
class ForwardOutput:
    score: Tensor  # (B,)
    logit: Tensor  # (B,)
    cost: Tensor  # (B, N, N)
    matching: Tensor  # (B, N, N)
    bias: Tensor  # (B,)


# ---------------------------------------------------------------------------
# the model

@dataclass
class AlignmentReport:
    g1_id: str
    g2_id: str
    cost_matrix: np.ndarray
    soft_matching: np.ndarray
    hard_permutation: np.ndarray
    predicted_score: float
    predicted_ged: float
    node_ops: list = field(default_factory=list)

    @property
    def matching(self) -> list[list[int]]:
        rows, cols = np.nonzero(self.hard_permutation)
        return [[int(i), int(j)] for i, j in zip(rows, cols)]

    def to_dict(self) -> dict:
        return {
            "g1": self.g1_id,
            "g2": self.g2_id,
            "predicted_score": self.predicted_score,
            "predicted_ged": self.predicted_ged,
            "matching": self.matching,
            "node_ops": self.node_ops,
            "cost_matrix": self.cost_matrix.tolist(),
            "soft_matching": self.soft_matching.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class GNAModel:
    def __init__(self, config: GnaConfig, params: Optional[dict] = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)

    def copy(self) -> "GNAModel":
        params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        return GNAModel(copy.deepcopy(self.config), params)

    def forward(self, batch: PairBatch, train: bool = False,
                rng: Optional[np.random.Generator] = None) -> ForwardOutput:
        cfg, p = self.config, self.params
        mask1, mask2 = batch.node_mask(1), batch.node_mask(2)
        h1 = gin_encode(p, batch.x1, batch.adj1, cfg, mask1)
        h2 = gin_encode(p, batch.x2, batch.adj2, cfg, mask2)
        inv_n1 = Tensor((1.0 / batch.n1)[:, None, None])
        inv_n2 = Tensor((1.0 / batch.n2)[:, None, None])
        hg1 = T.mul(T.sum(h1, axis=1, keepdims=True), inv_n1)  # (B, 1, d)
        hg2 = T.mul(T.sum(h2, axis=1, keepdims=True), inv_n2)
        if cfg.pad:
            h1s = T.add(h1, T.mul(Tensor(batch.pad_mask()[..., None].astype(np.float64)), hg1))
        else:
            h1s = h1
        block = batch.block_mask(cfg.pad)
        cost = cost_matrix(h1s, h2, p)
        noise = train and cfg.matching == "gumbel_sinkhorn"
        match = matching_matrix(h1s, h2, p, cfg, noise=noise, rng=rng, mask=block)
        B, d = batch.size, cfg.embed_dim
        bias = ntn_bias(T.reshape(hg1, (B, d)), T.reshape(hg2, (B, d)), p)
        logit = T.add(T.sum(T.mul(match, cost), axis=(1, 2)), bias)
        return ForwardOutput(T.sigmoid(logit), logit, cost, match, bias)

    def loss(self, batch: PairBatch, train: bool = False, rng=None) -> Tensor:
        """Mean squared error between predicted and normalized ground-truth scores."""
        out = self.forward(batch, train=train, rng=rng)
        diff = T.sub(out.score, batch.target)
        return T.scale(T.sum(T.square(diff)), 1.0 / batch.size)

    def predict_scores(self, pairs: Sequence, batch_size: int = 256) -> np.ndarray:
        """Evaluation-mode (noise-free) scores for a list of pairs."""
        out = []
        with T.no_grad():
            for start in range(0, len(pairs), batch_size):
                batch = make_batch(pairs[start:start + batch_size], self.config)
                out.append(self.forward(batch).score.data)
        return np.concatenate(out) if out else np.zeros(0)

    def predict_geds(self, pairs: Sequence, batch_size: int = 256) -> np.ndarray:
        scores = self.predict_scores(pairs, batch_size)
        return np.array([denormalize(s, *_graphs_of(p)) for s, p in zip(scores, pairs)])

    def predict(self, g1: Graph, g2: Graph, train: bool = False, rng=None) -> AlignmentReport:
        """Score one pair and return its full alignment report."""
        if g1.num_nodes > g2.num_nodes:
            g1, g2 = g2, g1
        batch = make_batch([(g1, g2)], self.config)
        with T.no_grad():
            out = self.forward(batch, train=train, rng=rng)
        n1, n2 = g1.num_nodes, g2.num_nodes
        rows = n2 if self.config.pad else n1
        cost = out.cost.data[0, :rows, :n2].copy()
        soft = out.matching.data[0, :rows, :n2].copy()
        hard = harden(soft)
        score = float(out.score.data[0])
        return AlignmentReport(
            g1_id=g1.id,
            g2_id=g2.id,
            cost_matrix=cost,
            soft_matching=soft,
            hard_permutation=hard,
            predicted_score=score,
            predicted_ged=denormalize(score, g1, g2),
            node_ops=node_operations(g1, g2, hard),
        )

    def save(self, path, extra_meta: Optional[dict] = None) -> None:
        meta = {"model": self.config.to_dict()}
        meta.update(extra_meta or {})
        T.save_params(path, self.params, meta)

    @classmethod
    def load(cls, path) -> tuple["GNAModel", dict]:
        params, meta = T.load_params(path)
        cfg = GnaConfig(**meta["model"])
        expected = init_params(cfg, 0)
        if set(expected) != set(params):
            raise ValueError(f"{path}: parameter names do not match the model config")
        for k, v in expected.items():
            if v.shape != params[k].shape:
                raise ValueError(f"{path}: parameter {k} has shape {params[k].shape}, expected {v.shape}")
        return cls(cfg, params), meta


def _graphs_of(p):
    if isinstance(p, GraphPair):
        return p.g1, p.g2
    g1, g2 = p
    return (g1, g2) if g1.num_nodes <= g2.num_nodes else (g2, g1)


def node_operations(g1: Graph, g2: Graph, hard: np.ndarray) -> list[dict]:
    """Per-node edits implied by a hard alignment of padded ``g1`` rows to ``g2`` nodes."""
    ops = []
    rows, cols = np.nonzero(hard)
    matched = set()
    for i, j in zip(rows.tolist(), cols.tolist()):
        matched.add(j)
        if i < g1.num_nodes:
            same = g1.node_labels[i] == g2.node_labels[j]
            ops.append({"op": "match" if same else "substitute", "g1_node": i, "g2_node": j})
        else:
            ops.append({"op": "insert", "g1_node": None, "g2_node": j})
    for j in range(g2.num_nodes):
        if j not in matched:
            ops.append({"op": "insert", "g1_node": None, "g2_node": j})
    return ops


def alignment_dot(report: AlignmentReport, g1: Graph, g2: Graph) -> str:
    """DOT drawing of both graphs with dashed alignment edges.

    Nodes of ``g2`` that no real ``g1`` node maps onto are drawn as red boxes:
    they must be inserted into ``g1`` (deleted from ``g2``).
    """
    if g1.num_nodes > g2.num_nodes:
        g1, g2 = g2, g1
    real = {op["g2_node"]: op["g1_node"] for op in report.node_ops if op["g1_node"] is not None}
    lines = ["graph alignment {", "  rankdir=LR;"]
    lines.append('  subgraph cluster_g1 {')
    lines.append(f'    label="{_esc(g1.id)}";')
    for i, lab in enumerate(g1.node_labels):
        lines.append(f'    a{i} [label="{i}:{lab}"];')
    for u, v in g1.edges:
        lines.append(f"    a{u} -- a{v};")
    lines.append("  }")
    lines.append('  subgraph cluster_g2 {')
    lines.append(f'    label="{_esc(g2.id)}";')
    for j, lab in enumerate(g2.node_labels):
        style = "" if j in real else ", shape=box, color=red"
        lines.append(f'    b{j} [label="{j}:{lab}"{style}];')
    for u, v in g2.edges:
        lines.append(f"    b{u} -- b{v};")
    lines.append("  }")
    for j, i in sorted(real.items()):
        lines.append(f"  a{i} -- b{j} [style=dashed, constraint=false];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _esc(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')
