import numpy as np
import pytest
from hypothesis import given, strategies as st

from graphtv.graph import (GraphError, WeightedGraph, apply_K, apply_KT, detect_grid,
                           generate_grid, generate_random_graph, load_benchmark, read_dimacs,
                           read_edgelist, total_variation, write_dimacs, write_edgelist)

from conftest import path_graph


def test_apply_K_chain_examples():
    g = path_graph(3)
    np.testing.assert_allclose(apply_K(g, [3, 1, 2]), [2, -1])
    g2 = path_graph(3, [2, 1])
    np.testing.assert_allclose(apply_K(g2, [3, 1, 2]), [4, -1])


def test_apply_KT_examples():
    g = path_graph(2)
    np.testing.assert_allclose(apply_KT(g, [1.0]), [1, -1])
    np.testing.assert_allclose(apply_KT(path_graph(3), [1, 1]), [1, 0, -1])


def test_constants_in_kernel():
    g = generate_random_graph(30, 80, seed=0)
    np.testing.assert_allclose(apply_K(g, np.full(30, 4.2)), 0.0)


@given(st.integers(2, 25), st.integers(0, 2**31 - 1))
def test_adjoint_identity(nv, seed):
    rng = np.random.default_rng(seed)
    ne = int(rng.integers(0, nv * (nv - 1) // 2 + 1))
    g = generate_random_graph(nv, ne, (0.1, 3.0), seed=seed)
    u = rng.standard_normal(nv)
    p = rng.standard_normal(ne)
    lhs = float(apply_K(g, u) @ p)
    rhs = float(u @ apply_KT(g, p))
    scale = max(1.0, np.abs(g.weights).sum() * np.abs(u).max() * (np.abs(p).max() if ne else 1))
    assert abs(lhs - rhs) <= 1e-12 * scale


def test_dimension_mismatch():
    g = path_graph(3)
    with pytest.raises(ValueError):
        apply_K(g, [1, 2])
    with pytest.raises(ValueError):
        apply_KT(g, [1, 2, 3])


def test_graph_invariants():
    with pytest.raises(GraphError):
        WeightedGraph(2, [0], [0], [1.0])
    with pytest.raises(GraphError):
        WeightedGraph(2, [0], [1], [0.0])
    with pytest.raises(GraphError):
        WeightedGraph(2, [0], [2], [1.0])
    g = path_graph(3)
    with pytest.raises(ValueError):
        g.tails[0] = 2


def test_grid_counts_and_order():
    assert generate_grid(2, 2).n_edges == 4
    g = generate_grid(4, 3)
    assert (g.n_vertices, g.n_edges) == (12, 17)
    assert generate_grid(100, 100).n_edges == 19800
    # horizontal edges first, row-major; then vertical, column-major
    assert list(zip(g.tails[:3], g.heads[:3])) == [(0, 1), (1, 2), (2, 3)]
    assert list(zip(g.tails[9:11], g.heads[9:11])) == [(0, 4), (4, 8)]
    with pytest.raises(GraphError):
        generate_grid(0, 3)


def test_random_graph():
    g = generate_random_graph(512, 2560, (0.0, 1.0), seed=3)
    assert g.n_edges / g.n_vertices == 5.0
    assert np.all(g.weights > 0) and np.all(g.weights <= 1)
    pairs = set(zip(g.tails.tolist(), g.heads.tolist()))
    assert len(pairs) == g.n_edges
    tri = generate_random_graph(3, 3, seed=1)
    assert sorted(zip(tri.tails.tolist(), tri.heads.tolist())) == [(0, 1), (0, 2), (1, 2)]
    g2 = generate_random_graph(512, 2560, (0.0, 1.0), seed=3)
    np.testing.assert_array_equal(g.tails, g2.tails)
    np.testing.assert_array_equal(g.weights, g2.weights)
    with pytest.raises(GraphError):
        generate_random_graph(4, 7)


def test_total_variation():
    g = path_graph(3, [2, 1])
    assert total_variation(g, [3, 1, 2]) == pytest.approx(5.0)


def test_dimacs_toy_mapping():
    text = "c toy\np max 4 4\nn 3 s\nn 4 t\na 3 1 3\na 1 4 1\na 1 2 2\n"
    g, f = read_dimacs(text)
    np.testing.assert_allclose(f, [2, 0])
    assert g.n_edges == 1 and g.weights[0] == 2.0


def test_dimacs_merges_antiparallel_arcs():
    text = "p max 4 4\nn 3 s\nn 4 t\na 1 2 1.5\na 2 1 0.5\na 3 2 1\n"
    g, f = read_dimacs(text)
    assert g.weights.tolist() == [2.0]
    np.testing.assert_allclose(f, [0, 1])


@pytest.mark.parametrize("text", [
    "p max 3 0\nn 1 s\nn 3 t\n",
    "p min 3 1\nn 1 s\nn 3 t\na 1 2 1\n",
    "p max 3 1\nn 1 s\nn 3 t\na 1 9 1\n",
    "p max 3 1\nn 1 s\nn 3 t\na 1 x 1\n",
    "n 1 s\na 1 2 1\n",
    "p max 4 1\nn 3 s\nn 4 t\na 1 2 -1\n",
])
def test_dimacs_errors(text):
    with pytest.raises(GraphError):
        read_dimacs(text)


def test_roundtrips(tmp_path):
    g = generate_random_graph(20, 50, (0.1, 1.0), seed=0)
    f = np.random.default_rng(0).standard_normal(20)
    write_dimacs(tmp_path / "a.max", g, f)
    g2, f2 = load_benchmark(tmp_path / "a.max")
    np.testing.assert_array_equal(g.tails, g2.tails)
    np.testing.assert_allclose(g.weights, g2.weights)
    np.testing.assert_allclose(f, f2)
    write_edgelist(tmp_path / "a.txt", g, f)
    g3, f3 = load_benchmark(tmp_path / "a.txt")
    np.testing.assert_allclose(g3.weights, g.weights)
    np.testing.assert_allclose(f3, f)
    g4, _ = read_edgelist("3 2\n1 2 1\n2 3 1\n")
    assert g4.n_edges == 2


def test_grid_detection(tmp_path):
    g = generate_grid(5, 4, 0.3)
    write_dimacs(tmp_path / "g.max", g, np.ones(20))
    g2, _ = load_benchmark(tmp_path / "g.max")
    assert g2.grid_shape == (4, 5)
    assert detect_grid(generate_random_graph(20, 31, seed=0)) is None


def test_edgelist_errors():
    with pytest.raises(GraphError):
        read_edgelist("3 2\n1 2 1\n")
    with pytest.raises(GraphError):
        read_edgelist("3 1\n1 5 1\n")
    with pytest.raises(GraphError):
        read_edgelist("3 1\n1 2 1\n0.5\n")
