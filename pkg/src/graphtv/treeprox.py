"""Exact weighted TV proximity on forests and dual recovery.

For a forest ``E_l`` with weighted incidence ``K_l`` the two problems

    v_l = argmin_u  0.5 ||u - f_l||^2 + ||K_l u||_1
    p_l = argmin_{|p| <= 1}  0.5 ||K_l^T p + f_l||^2

are a Fenchel pair linked by ``K_l^T p_l = v_l - f_l``; the first is
solved by leaf-to-root message passing, the second recovered from it by
leaf elimination.
"""
from __future__ import annotations

import numpy as np

from . import _kernels
from .forests import RootedForest
from .graph import WeightedGraph

#: retrieval residual above which the primal input is rejected
RETRIEVAL_TOL = 1e-6


class RetrievalError(ArithmeticError):
    pass


def _workspace(n):
    return (np.empty(n), np.empty(n), np.empty(2 * n + 2), np.empty(2 * n + 2),
            np.empty(n, np.int64))


def tv_on_forest(g: WeightedGraph, forest: RootedForest, f) -> np.ndarray:
    """Minimizer of ``0.5||u - f||^2 + sum_{e in forest} w_e |u_tail - u_head|``."""
    f = np.ascontiguousarray(f, dtype=np.float64)
    if f.shape != (g.n_vertices,) or not np.all(np.isfinite(f)):
        raise ValueError("f must be a finite vertex vector")
    x = np.empty(g.n_vertices)
    ylo, scratch, pos, dlt, seg = _workspace(g.n_vertices)
    _kernels.tv_forest(forest.post, forest.parent, forest.pedge, forest.nchild,
                       g.tails, g.weights, f, x, ylo, scratch, pos, dlt, seg)
    return x


def retrieve_dual(g: WeightedGraph, forest: RootedForest, f, v, clamp: bool = True) -> np.ndarray:
    """Edge vector ``p`` (zero off the forest) with ``K_l^T p = v - f``.

    Raises :class:`RetrievalError` if ``v - f`` does not sum to zero on
    every tree, which means ``v`` is not the TV proximum of ``f``.
    """
    d = np.asarray(v, dtype=np.float64) - np.asarray(f, dtype=np.float64)
    p = np.zeros(g.n_edges)
    worst = _kernels.retrieve_forest_dual(forest.post, forest.parent, forest.pedge,
                                          g.tails, g.weights, d, p)
    scale = max(1.0, float(np.abs(d).max(initial=0.0)))
    if worst > RETRIEVAL_TOL * scale:
        raise RetrievalError(f"retrieval residual {worst:.3e} exceeds tolerance")
    if clamp:
        np.clip(p, -1.0, 1.0, out=p)
    return p


def scaled_box_qp(g: WeightedGraph, forest: RootedForest, f) -> np.ndarray:
    """``argmin_{|p|<=1} 0.5 ||K_l^T p + f||^2`` restricted to the forest's edges."""
    v = tv_on_forest(g, forest, f)
    return retrieve_dual(g, forest, f, v)


def forest_edges(forest: RootedForest) -> np.ndarray:
    pe = forest.pedge
    return np.sort(pe[pe >= 0])
