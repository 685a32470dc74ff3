"""Edge partitions into forests.

The central routine is :func:`greedy_inactively_nested`: it peels minimum
spanning forests off the graph, ordering edges by how far their dual
variable is from the box boundary, so that edges believed to be inactive
are placed into the leading forests.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .graph import GraphError, WeightedGraph

#: singular values below ``RANK_RTOL * sigma_max`` count as zero
RANK_RTOL = 1e-9
#: dense span computations are refused above this many vertices
DENSE_VERTEX_LIMIT = 2000


@dataclass(frozen=True)
class RootedForest:
    """One forest rooted at the lowest-index vertex of each tree."""

    post: np.ndarray
    parent: np.ndarray
    pedge: np.ndarray
    nchild: np.ndarray
    tree_id: np.ndarray

    @property
    def n_trees(self) -> int:
        return int(self.tree_id.max()) + 1 if self.tree_id.size else 0


@dataclass(frozen=True, eq=False)
class ForestDecomposition:
    """Ordered partition of the edge set into forests ``E_1, ..., E_L``."""

    n_vertices: int
    forests: tuple[np.ndarray, ...]
    _rooted: list = field(default_factory=list, repr=False, compare=False)

    @classmethod
    def from_labels(cls, n_vertices: int, labels) -> "ForestDecomposition":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size == 0:
            return cls(n_vertices, ())
        L = int(labels.max()) + 1
        order = np.argsort(labels, kind="stable")
        bounds = np.searchsorted(labels[order], np.arange(L + 1))
        forests = tuple(np.sort(order[bounds[i]:bounds[i + 1]]) for i in range(L))
        return cls(n_vertices, forests)

    @property
    def L(self) -> int:
        return len(self.forests)

    @property
    def n_edges(self) -> int:
        return int(sum(len(f) for f in self.forests))

    def labels(self, n_edges: int) -> np.ndarray:
        """Forest index per edge (``-1`` for uncovered edges)."""
        lab = np.full(n_edges, -1, dtype=np.int64)
        for l, es in enumerate(self.forests):
            lab[es] = l
        return lab

    def rooted(self, g: WeightedGraph) -> list[RootedForest]:
        """Tree structure of each forest (computed once, then cached)."""
        if not self._rooted:
            for es in self.forests:
                post, parent, pedge, nchild, tree_id, acyclic = _kernels.root_forest(
                    g.n_vertices, g.tails, g.heads, np.ascontiguousarray(es, dtype=np.int64))
                if not acyclic:
                    raise GraphError("edge subset is not a forest")
                self._rooted.append(RootedForest(post, parent, pedge, nchild, tree_id))
        return self._rooted

    def stacked(self, g: WeightedGraph):
        """``(L, n)`` arrays consumed by the compiled block-forest update."""
        rooted = self.rooted(g)
        return (np.stack([r.post for r in rooted]),
                np.stack([r.parent for r in rooted]),
                np.stack([r.pedge for r in rooted]),
                np.stack([r.nchild for r in rooted]))

    def to_text(self) -> str:
        return "".join(" ".join(str(int(e)) for e in es) + "\n" for es in self.forests)

    @classmethod
    def from_text(cls, n_vertices: int, text: str) -> "ForestDecomposition":
        forests = tuple(np.array([int(tok) for tok in line.split()], dtype=np.int64)
                        for line in text.splitlines() if line.strip())
        return cls(n_vertices, forests)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def partition_weights(p) -> np.ndarray:
    """``rho_e = 1 - |1 - |p_e||``: large for edges near the box boundary."""
    p = np.asarray(p, dtype=np.float64)
    return 1.0 - np.abs(1.0 - np.abs(p))


def _kruskal_order(rho, edges=None) -> np.ndarray:
    if edges is None:
        edges = np.arange(len(rho))
    edges = np.asarray(edges, dtype=np.int64)
    rho = np.asarray(rho, dtype=np.float64)
    return edges[np.lexsort((edges, rho[edges]))]


def minimum_spanning_forest(g: WeightedGraph, rho, edges=None) -> np.ndarray:
    """Kruskal's minimum spanning forest with ties broken by edge index.

    ``rho`` is indexed by global edge id; ``edges`` restricts the candidate
    set (default: all edges). Returns the selected edge ids, sorted.
    """
    order = _kruskal_order(rho, edges)
    if order.size == 0:
        return order
    keep = _kernels.kruskal_select(g.n_vertices, g.tails, g.heads, order)
    return np.sort(order[keep])


def greedy_inactively_nested(g: WeightedGraph, p) -> ForestDecomposition:
    """Peel minimum spanning forests under ``partition_weights(p)`` until no edges remain."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (g.n_edges,):
        raise ValueError("p must have one entry per edge")
    order = _kruskal_order(partition_weights(p))
    labels = _kernels.peel_forests(g.n_vertices, g.tails, g.heads, order)
    return ForestDecomposition.from_labels(g.n_vertices, labels)


def fixed_nested_forest(g: WeightedGraph) -> ForestDecomposition:
    """Active-set-blind baseline: peeling with ``rho = 0``."""
    return greedy_inactively_nested(g, np.zeros(g.n_edges))


def grid_chain_decomposition(g: WeightedGraph) -> ForestDecomposition:
    """Horizontal row paths as the first forest, vertical column paths as the second."""
    if g.grid_shape is None:
        raise GraphError("chain decomposition needs a graph from generate_grid")
    height, width = g.grid_shape
    if height < 2 or width < 2:
        raise GraphError("chain decomposition needs both grid dimensions >= 2")
    # row-major labelling: horizontal neighbours differ by one, vertical by the width
    lo = np.minimum(g.tails, g.heads)
    step = np.abs(g.heads - g.tails)
    horizontal = (step == 1) & (lo % width != width - 1)
    vertical = step == width
    if not np.all(horizontal | vertical):
        raise GraphError("graph edges do not match its grid shape")
    return ForestDecomposition(g.n_vertices, (np.flatnonzero(horizontal), np.flatnonzero(vertical)))


def validate(d: ForestDecomposition, g: WeightedGraph) -> list[str]:
    """Return a list of violated partition properties (empty when valid)."""
    problems = []
    if d.L < 1:
        problems.append("decomposition has no forests")
    seen = np.zeros(g.n_edges, dtype=np.int64)
    for l, es in enumerate(d.forests):
        es = np.asarray(es, dtype=np.int64)
        if es.size == 0:
            problems.append(f"forest {l} is empty")
            continue
        if es.min() < 0 or es.max() >= g.n_edges:
            problems.append(f"forest {l} has edge ids out of range")
            continue
        np.add.at(seen, es, 1)
        *_, acyclic = _kernels.root_forest(g.n_vertices, g.tails, g.heads, es)
        if not acyclic:
            problems.append(f"forest {l} contains a cycle")
    if np.any(seen > 1):
        problems.append(f"edges in several forests (not disjoint): {np.flatnonzero(seen > 1).tolist()}")
    if np.any(seen == 0):
        problems.append(f"edges not covered: {np.flatnonzero(seen == 0).tolist()}")
    return problems


# --------------------------------------------------------------------------
# nesting diagnostics


def _rank(M: np.ndarray) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > RANK_RTOL * s[0])) if s[0] > 0 else 0


@dataclass(frozen=True)
class NestingProfile:
    """Span dimensions of the inactive incidence rows per forest.

    ``lhat`` is ``None`` when the spans do not form a decreasing chain.
    ``L_eff`` counts the forests whose inactive span is nonzero; the chain
    condition with a nonzero last span (``nested``) requires ``L_eff == L``.
    """

    L: int
    lhat: int | None
    dims: tuple[int, ...]
    chain: bool
    nested: bool
    L_eff: int


def nesting_profile(d: ForestDecomposition, g: WeightedGraph, inactive) -> NestingProfile:
    """Check ``S_1 = ... = S_lhat > S_{lhat+1} >= ... >= S_L > {0}`` by dense ranks."""
    if g.n_vertices > DENSE_VERTEX_LIMIT:
        raise ValueError(f"dense nesting check limited to {DENSE_VERTEX_LIMIT} vertices")
    inactive_mask = np.zeros(g.n_edges, dtype=bool)
    inactive_mask[np.asarray(list(inactive) if not isinstance(inactive, np.ndarray) else inactive,
                             dtype=np.int64)] = True
    D = g.incidence_dense()
    rows = [D[np.asarray(es)[inactive_mask[np.asarray(es)]]] for es in d.forests]
    dims = tuple(_rank(R) for R in rows)
    chain = True
    for l in range(1, len(rows)):
        # S_l is contained in S_{l-1} iff stacking does not raise the rank
        if _rank(np.vstack([rows[l - 1], rows[l]])) != dims[l - 1]:
            chain = False
            break
    L_eff = sum(1 for k in dims if k > 0)
    lhat = None
    if chain and d.L:
        lhat = 1
        while lhat < len(dims) and dims[lhat] == dims[0]:
            lhat += 1
        if dims[0] == 0:
            lhat = None
    nested = chain and lhat is not None and L_eff == d.L
    return NestingProfile(d.L, lhat, dims, chain, nested, L_eff)
