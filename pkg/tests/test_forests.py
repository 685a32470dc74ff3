import numpy as np
import pytest
from hypothesis import given, strategies as st

from graphtv.forests import (ForestDecomposition, fixed_nested_forest, greedy_inactively_nested,
                             grid_chain_decomposition, minimum_spanning_forest, nesting_profile,
                             partition_weights, validate)
from graphtv.graph import GraphError, WeightedGraph, generate_grid, generate_random_graph

from conftest import cycle_graph, path_graph, random_forest_graph


def test_partition_weights():
    np.testing.assert_allclose(partition_weights([0.0, 1.0, -1.0, 0.9, -0.3]),
                               [0.0, 1.0, 1.0, 0.9, 0.3])


def test_msf_examples():
    tri = WeightedGraph(3, [0, 0, 1], [1, 2, 2], [1.0, 1.0, 1.0])
    assert minimum_spanning_forest(tri, [0.1, 0.2, 0.3]).tolist() == [0, 1]
    assert minimum_spanning_forest(tri, [0.3, 0.2, 0.1]).tolist() == [1, 2]
    c4 = cycle_graph(4)
    assert minimum_spanning_forest(c4, np.zeros(4)).tolist() == [0, 1, 2]
    g = path_graph(5)
    assert minimum_spanning_forest(g, np.random.default_rng(0).random(4)).tolist() == [0, 1, 2, 3]
    assert minimum_spanning_forest(g, np.zeros(4), edges=[]).size == 0


@given(st.integers(0, 2**31 - 1))
def test_msf_size_and_minimality(seed):
    rng = np.random.default_rng(seed)
    nv = int(rng.integers(2, 12))
    ne = int(rng.integers(0, nv * (nv - 1) // 2 + 1))
    g = generate_random_graph(nv, ne, seed=seed)
    sel = minimum_spanning_forest(g, np.zeros(ne))
    ncomp = len(np.unique(g.components()))
    assert sel.size == nv - ncomp
    rho = rng.random(ne)
    sel = minimum_spanning_forest(g, rho)
    # cycle property: every unselected edge is the heaviest on the cycle it closes
    import scipy.sparse.csgraph as csg
    import scipy.sparse as sp
    for e in np.setdiff1d(np.arange(ne), sel):
        w = sp.coo_matrix((rho[sel] + 1e-300, (g.tails[sel], g.heads[sel])), shape=(nv, nv))
        dist, pred = csg.shortest_path(w, directed=False, indices=[g.tails[e]],
                                       return_predecessors=True)
        v = g.heads[e]
        assert np.isfinite(dist[0, v])
        while v != g.tails[e]:
            u = pred[0, v]
            ids = sel[((g.tails[sel] == min(u, v)) & (g.heads[sel] == max(u, v)))]
            assert rho[ids[0]] <= rho[e]
            v = u


def test_peeling_examples():
    d = greedy_inactively_nested(cycle_graph(4), np.zeros(4))
    assert d.L == 2 and [len(f) for f in d.forests] == [3, 1]
    assert greedy_inactively_nested(path_graph(6), np.random.default_rng(0).random(5)).L == 1
    tri = WeightedGraph(3, [0, 0, 1], [1, 2, 2], [1.0, 1.0, 1.0])
    assert fixed_nested_forest(tri).L == 2
    with pytest.raises(ValueError):
        greedy_inactively_nested(tri, np.zeros(2))


@given(st.integers(0, 2**31 - 1))
def test_peeling_is_valid_and_deterministic(seed):
    rng = np.random.default_rng(seed)
    nv = int(rng.integers(2, 40))
    ne = int(rng.integers(0, min(150, nv * (nv - 1) // 2) + 1))
    g = generate_random_graph(nv, ne, seed=seed)
    p = rng.uniform(-1, 1, ne)
    p[rng.random(ne) < 0.3] = 1.0
    d = greedy_inactively_nested(g, p)
    if ne:
        assert validate(d, g) == []
    d2 = greedy_inactively_nested(g, p)
    assert all(np.array_equal(a, b) for a, b in zip(d.forests, d2.forests))
    assert all(np.array_equal(a, b) for a, b in
               zip(fixed_nested_forest(g).forests, greedy_inactively_nested(g, np.zeros(ne)).forests))


@given(st.integers(0, 2**31 - 1))
def test_all_inactive_peeling_is_nested(seed):
    rng = np.random.default_rng(seed)
    nv = int(rng.integers(2, 51))
    g = random_forest_graph(rng, nv, extra_edges=int(rng.integers(0, 3 * nv)))
    d = greedy_inactively_nested(g, np.zeros(g.n_edges))
    prof = nesting_profile(d, g, np.arange(g.n_edges))
    assert prof.nested and prof.chain
    assert prof.L_eff == prof.L


def test_nesting_examples():
    g = cycle_graph(4)
    d = greedy_inactively_nested(g, np.zeros(4))
    prof = nesting_profile(d, g, np.arange(4))
    assert (prof.L, prof.lhat, prof.dims, prof.nested) == (2, 1, (3, 1), True)
    one = ForestDecomposition(4, (np.arange(3),))
    assert nesting_profile(one, path_graph(4), [0, 2]).lhat == 1
    # E1 = {0-1}, E2 = {1-2, 2-3, 3-0}: spans (1, 3) are not decreasing
    bad = ForestDecomposition(4, (np.array([0]), np.array([1, 2, 3])))
    prof = nesting_profile(bad, g, np.arange(4))
    assert not prof.nested and prof.lhat is None


def test_chains():
    g = generate_grid(2, 2)
    d = grid_chain_decomposition(g)
    assert [len(f) for f in d.forests] == [2, 2]
    g = generate_grid(5, 3)
    d = grid_chain_decomposition(g)
    assert [len(f) for f in d.forests] == [3 * 4, 5 * 2]
    assert validate(d, g) == []
    with pytest.raises(GraphError):
        grid_chain_decomposition(generate_grid(1, 4))
    with pytest.raises(GraphError):
        grid_chain_decomposition(cycle_graph(4))


def test_validate_reports():
    g = cycle_graph(4)
    assert validate(ForestDecomposition(4, (np.array([0, 1, 2]), np.array([3]))), g) == []
    dup = validate(ForestDecomposition(4, (np.array([0, 1, 2]), np.array([2, 3]))), g)
    assert any("disjoint" in s for s in dup)
    cyc = validate(ForestDecomposition(4, (np.arange(4),)), g)
    assert any("cycle" in s for s in cyc)
    miss = validate(ForestDecomposition(4, (np.array([0, 1]),)), g)
    assert any("not covered" in s for s in miss)
    empty = validate(ForestDecomposition(4, (np.arange(3), np.array([], dtype=int), np.array([3]))), g)
    assert any("empty" in s for s in empty)


def test_text_roundtrip(tmp_path):
    g = generate_random_graph(30, 90, seed=4)
    d = greedy_inactively_nested(g, np.zeros(90))
    d.save(tmp_path / "d.txt")
    back = ForestDecomposition.from_text(30, (tmp_path / "d.txt").read_text())
    assert all(np.array_equal(a, b) for a, b in zip(d.forests, back.forests))
