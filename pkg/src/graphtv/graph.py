"""Weighted graphs and the weighted incidence operator ``K = diag(w) grad``.

Edges are stored once, oriented from the lower to the higher vertex index,
and never reordered: every edge vector in the package is indexed by this
order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GraphError(ValueError):
    """Raised for malformed graphs or benchmark files."""


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Undirected graph with a fixed edge orientation and positive weights.

    Parameters
    ----------
    n_vertices : int
        Number of vertices, indexed ``0 .. n_vertices - 1``.
    tails, heads : array_like of int
        Edge endpoints. ``(K u)_e = w_e * (u[tails[e]] - u[heads[e]])``.
    weights : array_like of float
        Strictly positive edge weights.
    grid_shape : (height, width), optional
        Set by :func:`generate_grid`; used by the chain decomposition.
    """

    n_vertices: int
    tails: np.ndarray
    heads: np.ndarray
    weights: np.ndarray
    grid_shape: tuple[int, int] | None = None
    name: str = ""
    _degree: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        tails = np.ascontiguousarray(self.tails, dtype=np.int64)
        heads = np.ascontiguousarray(self.heads, dtype=np.int64)
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        nv = int(self.n_vertices)
        if nv < 1:
            raise GraphError("graph needs at least one vertex")
        if not (tails.shape == heads.shape == weights.shape) or tails.ndim != 1:
            raise GraphError("tails, heads and weights must be 1-d arrays of equal length")
        if tails.size:
            if tails.min() < 0 or heads.min() < 0 or max(tails.max(), heads.max()) >= nv:
                raise GraphError("edge endpoint out of range")
            if np.any(tails == heads):
                raise GraphError("self-loops are not allowed")
            if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
                raise GraphError("edge weights must be finite and strictly positive")
        for arr in (tails, heads, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "n_vertices", nv)
        object.__setattr__(self, "tails", tails)
        object.__setattr__(self, "heads", heads)
        object.__setattr__(self, "weights", weights)
        deg = np.bincount(tails, minlength=nv) + np.bincount(heads, minlength=nv)
        deg.setflags(write=False)
        object.__setattr__(self, "_degree", deg)

    @property
    def n_edges(self) -> int:
        return int(self.tails.size)

    @property
    def degree(self) -> np.ndarray:
        return self._degree

    def with_weights(self, weights) -> "WeightedGraph":
        """Same topology and orientation, new edge weights."""
        return WeightedGraph(self.n_vertices, self.tails, self.heads, weights,
                             grid_shape=self.grid_shape, name=self.name)

    def scaled(self, lam: float) -> "WeightedGraph":
        return self.with_weights(lam * self.weights)

    def incidence_dense(self) -> np.ndarray:
        """Unweighted ``grad`` as a dense ``(n_edges, n_vertices)`` array."""
        D = np.zeros((self.n_edges, self.n_vertices))
        idx = np.arange(self.n_edges)
        D[idx, self.tails] = 1.0
        D[idx, self.heads] = -1.0
        return D

    def K_dense(self) -> np.ndarray:
        return self.weights[:, None] * self.incidence_dense()

    def components(self) -> np.ndarray:
        """Connected-component label per vertex."""
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        A = coo_matrix((np.ones(self.n_edges), (self.tails, self.heads)),
                       shape=(self.n_vertices, self.n_vertices))
        return connected_components(A, directed=False)[1]


def _check_len(x, n, what):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError(f"{what} has shape {x.shape}, expected ({n},)")
    return x


def apply_K(g: WeightedGraph, u) -> np.ndarray:
    """Vertex-to-edge map: ``w_e * (u_tail - u_head)``."""
    u = _check_len(u, g.n_vertices, "vertex vector")
    return g.weights * (u[g.tails] - u[g.heads])


def apply_KT(g: WeightedGraph, p) -> np.ndarray:
    """Adjoint of :func:`apply_K` (edge-to-vertex divergence)."""
    p = _check_len(p, g.n_edges, "edge vector")
    wp = g.weights * p
    return (np.bincount(g.tails, wp, minlength=g.n_vertices)
            - np.bincount(g.heads, wp, minlength=g.n_vertices))


apply_K_transpose = apply_KT


def total_variation(g: WeightedGraph, u) -> float:
    return float(np.abs(apply_K(g, u)).sum())


# --------------------------------------------------------------------------
# generators


def generate_grid(width: int, height: int, weight: float = 1.0) -> WeightedGraph:
    """4-neighbour grid; vertex ``r * width + c``.

    Horizontal edges come first in row-major order, then vertical edges in
    column-major order.
    """
    if width < 1 or height < 1:
        raise GraphError("grid dimensions must be positive")
    idx = np.arange(width * height).reshape(height, width)
    h_t = idx[:, :-1].ravel()
    h_h = idx[:, 1:].ravel()
    v_t = idx[:-1, :].T.ravel()
    v_h = idx[1:, :].T.ravel()
    tails = np.concatenate([h_t, v_t])
    heads = np.concatenate([h_h, v_h])
    w = np.full(tails.size, float(weight))
    return WeightedGraph(width * height, tails, heads, w,
                         grid_shape=(height, width), name=f"grid{width}x{height}")


def generate_random_graph(n_vertices: int, n_edges: int, weight_range=(0.0, 1.0),
                          seed=None) -> WeightedGraph:
    """Uniformly random simple graph with exactly ``n_edges`` distinct edges.

    Weights are drawn uniformly from ``(lo, hi]`` so they stay positive even
    for ``lo = 0``.
    """
    cap = n_vertices * (n_vertices - 1) // 2
    if n_edges > cap:
        raise GraphError(f"{n_edges} edges exceed simple-graph capacity {cap}")
    if n_vertices < 1 or n_edges < 0:
        raise GraphError("invalid graph size")
    rng = np.random.default_rng(seed)
    codes = np.sort(rng.choice(cap, size=n_edges, replace=False))
    iu, ju = np.triu_indices(n_vertices, 1)
    i, j = iu[codes], ju[codes]
    lo, hi = weight_range
    w = hi - rng.random(n_edges) * (hi - lo)
    return WeightedGraph(n_vertices, i, j, w, name=f"random{n_vertices}_{n_edges}")


# --------------------------------------------------------------------------
# benchmark ingestion


def _merge_undirected(n, pairs):
    """Sum capacities of parallel / antiparallel arcs into undirected edges."""
    merged: dict[tuple[int, int], float] = {}
    for a, b, c in pairs:
        key = (a, b) if a < b else (b, a)
        merged[key] = merged.get(key, 0.0) + c
    keys = sorted(merged)
    tails = np.array([k[0] for k in keys], dtype=np.int64)
    heads = np.array([k[1] for k in keys], dtype=np.int64)
    w = np.array([merged[k] for k in keys], dtype=np.float64)
    if np.any(w <= 0):
        bad = keys[int(np.argmax(w <= 0))]
        raise GraphError(f"non-positive merged weight on edge {bad[0] + 1}-{bad[1] + 1}")
    return tails, heads, w


def read_dimacs(text: str, name: str = "") -> tuple[WeightedGraph, np.ndarray]:
    """Parse DIMACS max-flow text into a graph and unary data.

    Terminal arcs become ``f_i = cap(s -> i) - cap(i -> t)``; arcs into the
    source or out of the sink carry no flow and are ignored.
    """
    n = m = None
    source = sink = None
    arcs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if not parts or parts[0] == "c":
            continue
        tag = parts[0]
        try:
            if tag == "p":
                if len(parts) != 4 or parts[1] != "max":
                    raise GraphError(f"line {lineno}: malformed header {raw!r}")
                n, m = int(parts[2]), int(parts[3])
            elif tag == "n":
                node, kind = int(parts[1]), parts[2]
                if kind == "s":
                    source = node
                elif kind == "t":
                    sink = node
                else:
                    raise GraphError(f"line {lineno}: unknown terminal kind {kind!r}")
            elif tag == "a":
                arcs.append((int(parts[1]), int(parts[2]), float(parts[3]), lineno))
            else:
                raise GraphError(f"line {lineno}: unknown record {tag!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, GraphError):
                raise
            raise GraphError(f"line {lineno}: cannot parse {raw!r}") from exc
    if n is None:
        raise GraphError("missing 'p max' header")
    if not arcs:
        raise GraphError("benchmark has no arcs")
    if source is None or sink is None:
        raise GraphError("missing source or sink designation")
    for a, b, _, lineno in arcs:
        if not (1 <= a <= n and 1 <= b <= n):
            raise GraphError(f"line {lineno}: arc references vertex outside 1..{n}")
    inner = [v for v in range(1, n + 1) if v not in (source, sink)]
    index = {v: k for k, v in enumerate(inner)}
    f = np.zeros(len(inner))
    pairs = []
    for a, b, cap, lineno in arcs:
        if a == source and b in index:
            f[index[b]] += cap
        elif b == sink and a in index:
            f[index[a]] -= cap
        elif a in index and b in index:
            if a == b:
                raise GraphError(f"line {lineno}: self-loop arc")
            pairs.append((index[a], index[b], cap))
    tails, heads, w = _merge_undirected(len(inner), pairs)
    return WeightedGraph(len(inner), tails, heads, w, name=name), f


def read_edgelist(text: str, name: str = "") -> tuple[WeightedGraph, np.ndarray | None]:
    """Parse the plain edge-list format (1-based, optional trailing data)."""
    tokens = text.split()
    try:
        nv, ne = int(tokens[0]), int(tokens[1])
    except (IndexError, ValueError) as exc:
        raise GraphError("edge list must start with 'V E'") from exc
    body = tokens[2:]
    if len(body) < 3 * ne:
        raise GraphError("edge list truncated")
    try:
        rows = np.array(body[:3 * ne], dtype=np.float64).reshape(ne, 3)
    except ValueError as exc:
        raise GraphError("non-numeric edge entry") from exc
    rest = body[3 * ne:]
    a = rows[:, 0].astype(np.int64) - 1
    b = rows[:, 1].astype(np.int64) - 1
    if ne and (min(a.min(), b.min()) < 0 or max(a.max(), b.max()) >= nv):
        raise GraphError("edge references vertex outside 1..V")
    tails, heads, w = _merge_undirected(nv, zip(a.tolist(), b.tolist(), rows[:, 2].tolist()))
    f = None
    if rest:
        if len(rest) != nv:
            raise GraphError(f"expected {nv} data values, found {len(rest)}")
        f = np.array(rest, dtype=np.float64)
    return WeightedGraph(nv, tails, heads, w, name=name), f


def write_edgelist(path, g: WeightedGraph, f=None) -> None:
    lines = [f"{g.n_vertices} {g.n_edges}"]
    lines += [f"{t + 1} {h + 1} {w!r}" for t, h, w in
              zip(g.tails.tolist(), g.heads.tolist(), g.weights.tolist())]
    if f is not None:
        lines += [repr(float(x)) for x in f]
    Path(path).write_text("\n".join(lines) + "\n")


def write_dimacs(path, g: WeightedGraph, f) -> None:
    """Inverse of :func:`read_dimacs` (source ``n+1``, sink ``n+2``)."""
    n = g.n_vertices
    s, t = n + 1, n + 2
    arcs = [f"a {a + 1} {b + 1} {w!r}" for a, b, w in
            zip(g.tails.tolist(), g.heads.tolist(), g.weights.tolist())]
    for i, fi in enumerate(np.asarray(f, dtype=float).tolist()):
        if fi > 0:
            arcs.append(f"a {s} {i + 1} {fi!r}")
        elif fi < 0:
            arcs.append(f"a {i + 1} {t} {-fi!r}")
    text = [f"p max {n + 2} {len(arcs)}", f"n {s} s", f"n {t} t", *arcs]
    Path(path).write_text("\n".join(text) + "\n")


def load_benchmark(path) -> tuple[WeightedGraph, np.ndarray]:
    """Load a DIMACS max-flow file or a plain edge list (auto-detected)."""
    path = Path(path)
    text = path.read_text()
    first = next((ln.split() for ln in text.splitlines()
                  if ln.strip() and not ln.startswith("c")), None)
    if first is None:
        raise GraphError(f"{path}: empty file")
    if first[0] == "p":
        g, f = read_dimacs(text, name=path.stem)
    else:
        g, f = read_edgelist(text, name=path.stem)
        if f is None:
            f = np.zeros(g.n_vertices)
    shape = detect_grid(g)
    if shape is not None:
        g = WeightedGraph(g.n_vertices, g.tails, g.heads, g.weights, grid_shape=shape, name=g.name)
    return g, f


def detect_grid(g: WeightedGraph) -> tuple[int, int] | None:
    """Return ``(height, width)`` if ``g`` is a 4-neighbour grid in row-major labelling."""
    nv = g.n_vertices
    have = set(zip(g.tails.tolist(), g.heads.tolist()))
    for width in range(2, nv + 1):
        if nv % width:
            continue
        height = nv // width
        if g.n_edges != height * (width - 1) + width * (height - 1):
            continue
        ref = generate_grid(width, height)
        if set(zip(ref.tails.tolist(), ref.heads.tolist())) == have:
            return height, width
    return None
