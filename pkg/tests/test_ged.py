import itertools
import random

import pytest

from gna.ged import (
    apply_edit_path,
    brute_force_ged,
    edit_path_from_mapping,
    exact_ged,
    is_label_isomorphic,
    mapping_cost,
)
from gna.graph import Graph, generate_synthetic

TRIANGLE = Graph("tri", (0, 0, 0), ((0, 1), (1, 2), (0, 2)))
PATH3 = Graph("p3", (0, 0, 0), ((0, 1), (1, 2)))


def random_suite(count, max_nodes, seed, labels=3):
    rnd = random.Random(seed)
    graphs = generate_synthetic(4 * count, (1, max_nodes), 0.35, labels, seed=seed)
    return [(rnd.choice(graphs), rnd.choice(graphs)) for _ in range(count)]


def test_isomorphic_is_zero():
    g = Graph("g", (0, 1, 2, 1), ((0, 1), (1, 2), (2, 3)))
    h = g.permuted([3, 1, 0, 2], "h")
    assert exact_ged(g, h).ged == 0


def test_triangle_vs_path():
    # oracle: every bijection of three identically labeled nodes leaves one surplus edge
    costs = [mapping_cost(TRIANGLE, PATH3, perm) for perm in itertools.permutations(range(3))]
    assert min(costs) == 1
    assert exact_ged(TRIANGLE, PATH3).ged == 1
    assert brute_force_ged(TRIANGLE, PATH3) == 1


def test_single_substitution():
    a = Graph("a", (0, 1), ((0, 1),))
    b = Graph("b", (0, 2), ((0, 1),))
    assert min(mapping_cost(a, b, m) for m in [(0, 1), (1, 0)]) == 1
    assert exact_ged(a, b).ged == 1


def test_brute_force_node_vs_edge():
    one = Graph("one", (0,))
    two = Graph("two", (0, 0), ((0, 1),))
    # the lone node matches either end: insert the other node and the edge
    assert [mapping_cost(one, two, (w,)) for w in (0, 1)] == [2, 2]
    assert brute_force_ged(one, two) == 2
    assert exact_ged(one, two).ged == 2


def test_brute_force_limit():
    big = Graph("big", (0,) * 7)
    with pytest.raises(ValueError):
        brute_force_ged(big, big)


def test_brute_force_symmetric():
    for a, b in random_suite(60, 5, seed=11):
        assert brute_force_ged(a, b) == brute_force_ged(b, a)


def test_exact_matches_brute_force():
    for a, b in random_suite(150, 6, seed=3):
        assert exact_ged(a, b).ged == brute_force_ged(a, b), (a, b)


def test_unlabeled_matches_brute_force():
    for a, b in random_suite(60, 6, seed=4, labels=0):
        assert exact_ged(a, b).ged == brute_force_ged(a, b)


def test_symmetry_and_identity():
    for a, b in random_suite(80, 5, seed=8):
        ab, ba = exact_ged(a, b).ged, exact_ged(b, a).ged
        assert ab == ba
        assert (ab == 0) == is_label_isomorphic(a, b)
        assert exact_ged(a, a).ged == 0


def test_triangle_inequality():
    graphs = generate_synthetic(30, (1, 5), 0.4, 2, seed=21)
    rnd = random.Random(0)
    for _ in range(100):
        a, b, c = rnd.sample(graphs, 3)
        assert exact_ged(a, c).ged <= exact_ged(a, b).ged + exact_ged(b, c).ged


def test_edit_path_replay():
    for a, b in random_suite(80, 6, seed=5):
        res = exact_ged(a, b)
        assert res.path.total_cost == res.ged
        edited = apply_edit_path(a, res.path)
        assert is_label_isomorphic(edited, b)


def test_edit_path_from_arbitrary_mapping():
    a = Graph("a", (0, 1, 1), ((0, 1), (1, 2)))
    b = Graph("b", (1, 0, 2, 2), ((0, 1), (1, 2), (2, 3)))
    for mapping in [(0, 1, 2), (-1, 3, 0), (2, -1, -1)]:
        path = edit_path_from_mapping(a, b, mapping)
        assert path.total_cost == mapping_cost(a, b, mapping)
        assert is_label_isomorphic(apply_edit_path(a, path), b)


def test_path_is_deterministic():
    a, b = random_suite(1, 6, seed=9)[0]
    assert exact_ged(a, b).path == exact_ged(a, b).path


def test_budget_exhaustion_is_unsolved():
    a = generate_synthetic(1, (9, 9), 0.5, 0, seed=1)[0]
    b = generate_synthetic(1, (10, 10), 0.3, 0, seed=2)[0]
    full = exact_ged(a, b, budget=None)
    assert full.solved and full.expansions > 1
    res = exact_ged(a, b, budget=1)
    assert res.ged is None and res.path is None and not res.solved


def test_ten_node_graphs_solve():
    graphs = generate_synthetic(6, (10, 10), 0.2, 4, seed=0)
    for a, b in zip(graphs, graphs[1:]):
        res = exact_ged(a, b)
        assert res.solved
        assert res.ged == mapping_cost(a, b, res.path.mapping)
