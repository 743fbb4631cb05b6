"""Exact unit-cost graph edit distance.

Every node insertion, node deletion, node relabeling, edge insertion and
edge deletion costs 1. :func:`exact_ged` runs A* over partial node maps;
:func:`brute_force_ged` enumerates bijections and is kept as an
independent test oracle for small graphs.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .graph import Graph

BRUTE_FORCE_MAX_NODES = 6


@dataclass(frozen=True)
class EditOp:
    """One unit-cost edit.

    ``kind`` is one of ``insert-node``, ``delete-node``, ``substitute-node``,
    ``insert-edge``, ``delete-edge``. Node indices refer to the working
    graph: original ``g1`` indices, followed by inserted nodes numbered
    from ``|V1|`` in insertion order.
    """

    kind: str
    node: Optional[int] = None
    label: Optional[int] = None
    u: Optional[int] = None
    v: Optional[int] = None

    def to_record(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass(frozen=True)
class EditPath:
    operations: tuple[EditOp, ...]
    mapping: tuple[int, ...]  # g1 node -> g2 node, or -1 for deleted

    @property
    def total_cost(self) -> int:
        return len(self.operations)


@dataclass(frozen=True)
class GedResult:
    ged: Optional[int]
    path: Optional[EditPath]
    expansions: int

    @property
    def solved(self) -> bool:
        return self.ged is not None


def _popcount(x: int) -> int:
    return bin(x).count("1")


def _masks(g: Graph, order: Optional[list[int]] = None) -> list[int]:
    pos = {node: i for i, node in enumerate(order)} if order is not None else None
    n = g.num_nodes
    masks = [0] * n
    for u, v in g.edges:
        if pos is not None:
            u, v = pos[u], pos[v]
        masks[u] |= 1 << v
        masks[v] |= 1 << u
    return masks


def _search_order(g: Graph) -> list[int]:
    """Greedy order that front-loads edges between already placed nodes."""
    n = g.num_nodes
    nbrs = [set(x) for x in g.neighbors()]
    deg = [len(x) for x in nbrs]
    order: list[int] = []
    placed: set[int] = set()
    while len(order) < n:
        best = max(
            (u for u in range(n) if u not in placed),
            key=lambda u: (len(nbrs[u] & placed), deg[u], -u),
        )
        order.append(best)
        placed.add(best)
    return order


def mapping_cost(g1: Graph, g2: Graph, mapping) -> int:
    """Edit cost induced by a node map (``-1`` = delete)."""
    lab1, lab2 = g1.node_labels, g2.node_labels
    cost = 0
    image = set()
    for u, w in enumerate(mapping):
        if w < 0:
            cost += 1
        else:
            image.add(w)
            cost += lab1[u] != lab2[w]
    cost += g2.num_nodes - len(image)
    e2 = set(g2.edges)
    covered = 0
    for u, v in g1.edges:
        a, b = mapping[u], mapping[v]
        if a >= 0 and b >= 0 and (min(a, b), max(a, b)) in e2:
            covered += 1
        else:
            cost += 1
    cost += len(e2) - covered
    return cost


def _upper_bound_mapping(g1: Graph, g2: Graph) -> list[int]:
    """Bipartite node-assignment mapping (labels plus degree difference)."""
    n1, n2 = g1.num_nodes, g2.num_nodes
    d1 = [len(x) for x in g1.neighbors()]
    d2 = [len(x) for x in g2.neighbors()]
    big = 1e6
    c = np.zeros((n1 + n2, n1 + n2))
    for i in range(n1):
        for j in range(n2):
            c[i, j] = (g1.node_labels[i] != g2.node_labels[j]) + abs(d1[i] - d2[j]) / 2.0
    c[:n1, n2:] = big
    for i in range(n1):
        c[i, n2 + i] = 1 + d1[i] / 2.0
    c[n1:, :n2] = big
    for j in range(n2):
        c[n1 + j, j] = 1 + d2[j] / 2.0
    rows, cols = linear_sum_assignment(c)
    mapping = [-1] * n1
    for r, col in zip(rows, cols):
        if r < n1 and col < n2:
            mapping[r] = int(col)
    return mapping


def exact_ged(g1: Graph, g2: Graph, budget: Optional[int] = 200_000) -> GedResult:
    """Exact GED by A* over node maps of ``g1`` taken in a fixed order.

    ``budget`` caps the number of expanded states; running out returns an
    unsolved result (``ged is None``) rather than an upper bound.
    """
    n1, n2 = g1.num_nodes, g2.num_nodes
    if n1 == 0 and n2 == 0:
        return GedResult(0, EditPath((), ()), 0)
    order = _search_order(g1)
    a1 = _masks(g1, order)
    lab1 = [g1.node_labels[u] for u in order]
    a2 = _masks(g2)
    lab2 = list(g2.node_labels)
    full2 = (1 << n2) - 1
    labels = sorted(set(lab1) | set(lab2))
    lab_index = {lab: i for i, lab in enumerate(labels)}
    l1 = [lab_index[x] for x in lab1]
    l2 = [lab_index[x] for x in lab2]
    # suffix data for the unplaced part of g1
    suffix_mask = [((1 << n1) - 1) & ~((1 << k) - 1) for k in range(n1 + 1)]
    suffix_counts = []
    for k in range(n1 + 1):
        cnt = [0] * len(labels)
        for i in range(k, n1):
            cnt[l1[i]] += 1
        suffix_counts.append(cnt)
    suffix_edges = [
        sum(_popcount(a1[i] & suffix_mask[k]) for i in range(k, n1)) // 2 for k in range(n1 + 1)
    ]
    back_mask = [a1[k] & ((1 << k) - 1) for k in range(n1)]

    def heuristic(k: int, assign: tuple, free: int) -> int:
        cnt1 = suffix_counts[k]
        cnt2 = [0] * len(labels)
        free_edges2 = 0
        nfree = 0
        f = free
        while f:
            low = f & -f
            w = low.bit_length() - 1
            cnt2[l2[w]] += 1
            free_edges2 += _popcount(a2[w] & free)
            nfree += 1
            f ^= low
        common = sum(min(x, y) for x, y in zip(cnt1, cnt2))
        h = max(n1 - k, nfree) - common
        h += abs(suffix_edges[k] - free_edges2 // 2)
        sm = suffix_mask[k]
        for j in range(k):
            d1 = _popcount(a1[j] & sm)
            w = assign[j]
            if w < 0:
                h += d1
            else:
                h += abs(d1 - _popcount(a2[w] & free))
        return h

    def completion(assign: tuple, free: int) -> int:
        # insert every free g2 node plus its edges to the image and to each other
        cost = 0
        f = free
        while f:
            low = f & -f
            w = low.bit_length() - 1
            cost += 1 + _popcount(a2[w] & ~free & full2) + _popcount(a2[w] & free)
            f ^= low
        # edges among free nodes were counted twice above
        return cost - _free_internal_edges(free)

    def _free_internal_edges(free: int) -> int:
        total = 0
        f = free
        while f:
            low = f & -f
            w = low.bit_length() - 1
            total += _popcount(a2[w] & free)
            f ^= low
        return total // 2

    def step_cost(k: int, assign: tuple, w: int) -> int:
        back = back_mask[k]
        if w < 0:
            return 1 + _popcount(back)
        c = l1[k] != l2[w]
        row2 = a2[w]
        b = back
        while b:
            low = b & -b
            j = low.bit_length() - 1
            wj = assign[j]
            if wj < 0 or not (row2 >> wj) & 1:
                c += 1
            b ^= low
        # g2 edges from w to images of placed nodes that g1 lacks
        for j in range(k):
            wj = assign[j]
            if wj >= 0 and (row2 >> wj) & 1 and not (back >> j) & 1:
                c += 1
        return c

    # upper bound from a bipartite assignment; states that cannot beat it are pruned
    ub_map_orig = _upper_bound_mapping(g1, g2)
    best_cost = mapping_cost(g1, g2, ub_map_orig)
    best_map = tuple(ub_map_orig[u] for u in order)

    heap: list = []
    start_h = heuristic(0, (), full2)
    if n1 == 0:
        best_cost = completion((), full2)
        best_map = ()
    elif start_h < best_cost:
        heap.append((start_h, 0, (), 0, full2))
    expansions = 0
    while heap:
        f, negk, assign, g, free = heapq.heappop(heap)
        if f >= best_cost:
            break
        k = -negk
        if k == n1:
            best_cost, best_map = g, assign
            break
        expansions += 1
        if budget is not None and expansions > budget:
            return GedResult(None, None, expansions)
        candidates = [w for w in range(n2) if (free >> w) & 1] + [-1]
        for w in candidates:
            ng = g + step_cost(k, assign, w)
            nassign = assign + (w,)
            nfree = free & ~(1 << w) if w >= 0 else free
            if k + 1 == n1:
                ng += completion(nassign, nfree)
                nf = ng
            else:
                nf = ng + heuristic(k + 1, nassign, nfree)
            if nf < best_cost:
                heapq.heappush(heap, (nf, -(k + 1), nassign, ng, nfree))
    mapping = [-1] * n1
    for pos, node in enumerate(order):
        mapping[node] = best_map[pos] if pos < len(best_map) else -1
    path = edit_path_from_mapping(g1, g2, mapping)
    assert path.total_cost == best_cost
    return GedResult(best_cost, path, expansions)


def edit_path_from_mapping(g1: Graph, g2: Graph, mapping) -> EditPath:
    """Edit operations realising a node map from ``g1`` onto ``g2``."""
    n1 = g1.num_nodes
    mapping = [int(m) for m in mapping]
    ops: list[EditOp] = []
    inverse = {w: u for u, w in enumerate(mapping) if w >= 0}
    e1, e2 = set(g1.edges), set(g2.edges)
    # working index of every g2 node: its preimage, or a freshly inserted node
    work = {}
    next_idx = n1
    for w in range(g2.num_nodes):
        if w in inverse:
            work[w] = inverse[w]
    for u, v in g1.edges:
        a, b = mapping[u], mapping[v]
        if a < 0 or b < 0 or (min(a, b), max(a, b)) not in e2:
            ops.append(EditOp("delete-edge", u=u, v=v))
    for u, w in enumerate(mapping):
        if w < 0:
            ops.append(EditOp("delete-node", node=u))
        elif g1.node_labels[u] != g2.node_labels[w]:
            ops.append(EditOp("substitute-node", node=u, label=g2.node_labels[w]))
    for w in range(g2.num_nodes):
        if w not in work:
            work[w] = next_idx
            next_idx += 1
            ops.append(EditOp("insert-node", node=work[w], label=g2.node_labels[w]))
    for a, b in g2.edges:
        ua, ub = inverse.get(a), inverse.get(b)
        if ua is None or ub is None or (min(ua, ub), max(ua, ub)) not in e1:
            x, y = work[a], work[b]
            ops.append(EditOp("insert-edge", u=min(x, y), v=max(x, y)))
    return EditPath(tuple(ops), tuple(mapping))


def apply_edit_path(g: Graph, path: EditPath, new_id: str = "edited") -> Graph:
    """Replay ``path`` on ``g`` and return the compacted result."""
    labels = dict(enumerate(g.node_labels))
    edges = {tuple(e) for e in g.edges}
    for op in path.operations:
        if op.kind == "insert-node":
            if op.node in labels:
                raise ValueError(f"node {op.node} already exists")
            labels[op.node] = op.label
        elif op.kind == "delete-node":
            if any(op.node in e for e in edges):
                raise ValueError(f"node {op.node} still has incident edges")
            del labels[op.node]
        elif op.kind == "substitute-node":
            labels[op.node] = op.label
        elif op.kind == "insert-edge":
            e = (min(op.u, op.v), max(op.u, op.v))
            if e in edges or op.u not in labels or op.v not in labels:
                raise ValueError(f"cannot insert edge {e}")
            edges.add(e)
        elif op.kind == "delete-edge":
            e = (min(op.u, op.v), max(op.u, op.v))
            if e not in edges:
                raise ValueError(f"cannot delete missing edge {e}")
            edges.remove(e)
        else:
            raise ValueError(f"unknown edit operation {op.kind!r}")
    keep = sorted(labels)
    remap = {old: i for i, old in enumerate(keep)}
    return Graph(
        new_id,
        tuple(labels[k] for k in keep),
        tuple((remap[u], remap[v]) for u, v in edges),
    )


# ---------------------------------------------------------------------------
# brute-force oracle

def brute_force_ged(g1: Graph, g2: Graph) -> int:
    """GED by enumerating every bijection after padding the smaller graph."""
    n = max(g1.num_nodes, g2.num_nodes)
    if n > BRUTE_FORCE_MAX_NODES:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_MAX_NODES} nodes, got {n}")
    if n == 0:
        return 0
    swap = g1.num_nodes > g2.num_nodes
    small, large = (g2, g1) if swap else (g1, g2)
    a_small = np.zeros((n, n), dtype=np.int64)
    a_small[: small.num_nodes, : small.num_nodes] = small.adjacency()
    a_large = large.adjacency().astype(np.int64)
    dummy = -2  # never equals a real label
    lab_small = np.full(n, dummy)
    lab_small[: small.num_nodes] = small.node_labels
    lab_large = np.array(large.node_labels)

    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    # small node i <-> large node perms[:, i]
    node_cost = (lab_small[None, :] != lab_large[perms]).sum(axis=1)
    permuted = a_large[perms[:, :, None], perms[:, None, :]]
    edge_cost = np.abs(permuted - a_small[None]).sum(axis=(1, 2)) // 2
    return int((node_cost + edge_cost).min())


def is_label_isomorphic(g1: Graph, g2: Graph) -> bool:
    if g1.num_nodes != g2.num_nodes or g1.num_edges != g2.num_edges:
        return False
    if sorted(g1.node_labels) != sorted(g2.node_labels):
        return False
    return brute_force_ged(g1, g2) == 0
