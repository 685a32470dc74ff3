import numpy as np
import pytest
from hypothesis import settings

from graphtv.graph import WeightedGraph

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def random_forest_graph(rng, n_vertices, extra_edges=0, w_range=(0.1, 2.0)):
    """Random tree on ``n_vertices`` plus ``extra_edges`` random chords (may add cycles)."""
    tails, heads = [], []
    for v in range(1, n_vertices):
        u = int(rng.integers(0, v))
        tails.append(u)
        heads.append(v)
    have = set(zip(tails, heads))
    tries = 0
    while extra_edges and tries < 100:
        tries += 1
        a, b = sorted(rng.choice(n_vertices, 2, replace=False).tolist())
        if (a, b) not in have:
            have.add((a, b))
            tails.append(a)
            heads.append(b)
            extra_edges -= 1
    w = rng.uniform(*w_range, len(tails))
    return WeightedGraph(n_vertices, np.array(tails), np.array(heads), w)


def cycle_graph(n, weight=1.0):
    tails = np.arange(n)
    heads = (np.arange(n) + 1) % n
    t, h = np.minimum(tails, heads), np.maximum(tails, heads)
    return WeightedGraph(n, t, h, np.full(n, weight))


def path_graph(n, weights=None):
    w = np.ones(n - 1) if weights is None else np.asarray(weights, dtype=float)
    return WeightedGraph(n, np.arange(n - 1), np.arange(1, n), w)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
