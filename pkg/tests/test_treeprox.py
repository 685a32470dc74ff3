import numpy as np
import pytest
from hypothesis import given, strategies as st

from graphtv.forests import ForestDecomposition, greedy_inactively_nested
from graphtv.graph import WeightedGraph, apply_K, apply_KT
from graphtv.oracle import exact_box_qp
from graphtv.treeprox import RetrievalError, retrieve_dual, scaled_box_qp, tv_on_forest

from conftest import path_graph, random_forest_graph


def whole(g):
    return ForestDecomposition(g.n_vertices, (np.arange(g.n_edges),)).rooted(g)[0]


def test_single_edge_examples():
    g = WeightedGraph(2, [0], [1], [0.5])
    v = tv_on_forest(g, whole(g), [3.0, 1.0])
    np.testing.assert_allclose(v, [2.5, 1.5])
    p = retrieve_dual(g, whole(g), [3.0, 1.0], v)
    np.testing.assert_allclose(p, [-1.0])
    g2 = WeightedGraph(2, [0], [1], [2.0])
    np.testing.assert_allclose(tv_on_forest(g2, whole(g2), [3.0, 1.0]), [2.0, 2.0])


def test_constant_signal():
    rng = np.random.default_rng(0)
    g = random_forest_graph(rng, 9)
    f = np.full(9, 1.7)
    np.testing.assert_allclose(tv_on_forest(g, whole(g), f), f)
    np.testing.assert_allclose(scaled_box_qp(g, whole(g), np.zeros(9)), 0.0, atol=1e-14)


def test_huge_signal_saturates():
    g = path_graph(5)
    p = scaled_box_qp(g, whole(g), np.array([100.0, -50, 80, -90, 10]))
    assert np.abs(p).max() == 1.0


@given(st.integers(0, 2**31 - 1))
def test_matches_enumeration_oracle(seed):
    rng = np.random.default_rng(seed)
    nv = int(rng.integers(2, 11))
    g = random_forest_graph(rng, nv)
    f = rng.normal(0, 2, nv)
    v = tv_on_forest(g, whole(g), f)
    # the box QP min 0.5||K^T p + f||^2 has primal recovery u = K^T p + f
    ex = exact_box_qp(g.K_dense(), f)
    np.testing.assert_allclose(v, ex.u, atol=1e-8)
    p = retrieve_dual(g, whole(g), f, v)
    np.testing.assert_allclose(apply_KT(g, p), v - f, atol=1e-8)
    obj = lambda q: 0.5 * float(np.sum((apply_KT(g, q) + f) ** 2))
    assert obj(p) <= ex.objective + 1e-12
    assert ex.objective <= obj(p) + 1e-12


@given(st.integers(0, 2**31 - 1))
def test_subgradient_optimality(seed):
    rng = np.random.default_rng(seed)
    g = random_forest_graph(rng, int(rng.integers(2, 30)))
    f = rng.normal(0, 1, g.n_vertices)
    v = tv_on_forest(g, whole(g), f)
    p = retrieve_dual(g, whole(g), f, v)
    Kv = apply_K(g, v)
    big = np.abs(Kv) > 1e-9
    np.testing.assert_allclose(p[big], -np.sign(Kv[big]))
    assert np.abs(p).max(initial=0) <= 1.0


@given(st.integers(0, 2**31 - 1))
def test_prox_is_nonexpansive(seed):
    rng = np.random.default_rng(seed)
    g = random_forest_graph(rng, int(rng.integers(2, 25)))
    f1 = rng.normal(0, 1, g.n_vertices)
    f2 = f1 + rng.normal(0, 0.3, g.n_vertices)
    v1 = tv_on_forest(g, whole(g), f1)
    v2 = tv_on_forest(g, whole(g), f2)
    assert np.linalg.norm(v1 - v2) <= np.linalg.norm(f1 - f2) + 1e-12


def test_forest_with_several_trees_and_order_independence():
    rng = np.random.default_rng(3)
    g = random_forest_graph(rng, 40, extra_edges=60)
    d = greedy_inactively_nested(g, np.zeros(g.n_edges))
    f = rng.normal(0, 1, 40)
    for forest, es in zip(d.rooted(g), d.forests):
        v = tv_on_forest(g, forest, f)
        # solving each tree alone gives identical values on its vertices
        for tree in np.unique(forest.tree_id):
            verts = np.flatnonzero(forest.tree_id == tree)
            sub = es[np.isin(g.tails[es], verts)]
            alone = ForestDecomposition(40, (sub,)).rooted(g)[0] if sub.size else None
            if alone is not None:
                np.testing.assert_array_equal(tv_on_forest(g, alone, f)[verts], v[verts])


def test_retrieval_rejects_wrong_primal():
    g = path_graph(3)
    with pytest.raises(RetrievalError):
        retrieve_dual(g, whole(g), np.zeros(3), np.array([1.0, 0.0, 0.0]))
    with pytest.raises(ValueError):
        tv_on_forest(g, whole(g), np.array([1.0, np.inf, 0.0]))
