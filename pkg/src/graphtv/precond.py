"""Metrics ``T`` for the scaled dual step.

Every preconditioner solves

    p+ = argmin_{|p|_inf <= 1}  -<K ubar, p> + (t/2) ||p - p_k||_T^2

through :meth:`Preconditioner.update`. Identity and diagonal metrics do it
by a clipped gradient step. The block-forest metric
``T = sum_l P_l^T K_l K_l^T P_l`` splits into one box QP per forest, which
is solved exactly by tree TV proximity plus dual retrieval.
"""
from __future__ import annotations

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from . import _kernels
from .forests import ForestDecomposition, validate
from .graph import GraphError, WeightedGraph, apply_K, apply_KT
from .treeprox import RETRIEVAL_TOL, RetrievalError

#: dense metric assembly is refused above this many edges
DENSE_EDGE_LIMIT = 2000
#: below this many vertices the operator norm is computed densely
DENSE_NORM_VERTICES = 64


class Preconditioner:
    """Common interface; subclasses fix the metric."""

    name = "base"

    def __init__(self, g: WeightedGraph):
        self.g = g

    def update(self, p, ubar, t, out=None) -> np.ndarray:
        raise NotImplementedError

    def normal_apply(self, x) -> np.ndarray:
        """``K^T T^{-1} K x``."""
        raise NotImplementedError

    def T_norm_sq(self, x) -> float:
        raise NotImplementedError

    def dense_T(self) -> np.ndarray:
        raise NotImplementedError

    def norm_cap(self) -> float:
        """A proven upper bound on ``lambda_max(K^T T^{-1} K)``."""
        raise NotImplementedError

    def operator_norm_sq(self, tol: float = 1e-6, seed: int = 0) -> float:
        """Estimate of ``lambda_max(K^T T^{-1} K)``, inflated by 1% and capped."""
        n = self.g.n_vertices
        cap = self.norm_cap()
        if self.g.n_edges == 0:
            return 0.0
        if n <= DENSE_NORM_VERTICES:
            M = np.column_stack([self.normal_apply(e) for e in np.eye(n)])
            est = float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])
            return min(est * 1.01, cap)
        # a few power steps: Rayleigh quotients are lower bounds, so once one
        # reaches cap / 1.01 the cap is the answer
        x = np.random.default_rng(seed).standard_normal(n)
        for _ in range(30):
            y = self.normal_apply(x)
            rq = float(x @ y) / float(x @ x)
            if rq * 1.01 >= cap:
                return cap
            x = y / np.linalg.norm(y)
        op = LinearOperator((n, n), matvec=self.normal_apply, dtype=np.float64)
        est = float(eigsh(op, k=1, which="LA", tol=tol, v0=x,
                          return_eigenvectors=False, maxiter=20 * n)[0])
        return min(est * 1.01, cap)

    def _check(self, p, ubar, t):
        if not (t > 0 and np.isfinite(t)):
            raise ValueError("dual step t must be positive and finite")
        p = np.asarray(p, dtype=np.float64)
        ubar = np.asarray(ubar, dtype=np.float64)
        if p.shape != (self.g.n_edges,) or ubar.shape != (self.g.n_vertices,):
            raise ValueError("dimension mismatch in dual update")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(ubar))):
            raise ValueError("non-finite input to dual update")
        return p, ubar


class DiagonalPreconditioner(Preconditioner):
    """``T = diag(d)`` with ``d > 0``."""

    name = "diagonal"

    def __init__(self, g: WeightedGraph, d, name: str | None = None):
        super().__init__(g)
        d = np.asarray(d, dtype=np.float64)
        if d.shape != (g.n_edges,) or np.any(d <= 0):
            raise ValueError("diagonal metric needs one positive entry per edge")
        self.d = d
        if name:
            self.name = name

    def update(self, p, ubar, t, out=None):
        p, ubar = self._check(p, ubar, t)
        step = p + apply_K(self.g, ubar) / (t * self.d)
        return np.clip(step, -1.0, 1.0, out=out)

    def normal_apply(self, x):
        return apply_KT(self.g, apply_K(self.g, x) / self.d)

    def T_norm_sq(self, x):
        return float(np.sum(self.d * np.asarray(x) ** 2))

    def dense_T(self):
        return np.diag(self.d)

    def norm_cap(self):
        # Gershgorin on the weighted Laplacian K^T D^{-1} K
        c = self.g.weights ** 2 / self.d
        rows = np.bincount(self.g.tails, c, self.g.n_vertices) + np.bincount(
            self.g.heads, c, self.g.n_vertices)
        return float(2.0 * rows.max(initial=0.0))


class IdentityPreconditioner(DiagonalPreconditioner):
    name = "identity"

    def __init__(self, g: WeightedGraph):
        super().__init__(g, np.ones(g.n_edges))

    def dense_T(self):
        return np.eye(self.g.n_edges)


def diagonal_preconditioner(g: WeightedGraph, variant: str = "kkt") -> DiagonalPreconditioner:
    """``variant='kkt'``: ``diag(K K^T) = 2 w^2``; ``'pock'``: row sums ``2 w`` (alpha = 1)."""
    if variant == "kkt":
        return DiagonalPreconditioner(g, 2.0 * g.weights ** 2, "diagonal")
    if variant == "pock":
        return DiagonalPreconditioner(g, 2.0 * g.weights, "diagonal-pock")
    raise ValueError(f"unknown diagonal variant {variant!r}")


class BlockForestPreconditioner(Preconditioner):
    """``T = sum_l P_l^T K_l K_l^T P_l`` for a forest decomposition."""

    name = "block-forest"

    def __init__(self, g: WeightedGraph, decomposition: ForestDecomposition, check: bool = True):
        super().__init__(g)
        if check:
            problems = validate(decomposition, g)
            if problems:
                raise GraphError("invalid decomposition: " + "; ".join(problems))
        self.decomposition = decomposition
        self._stacked = decomposition.stacked(g)
        self.tree_ids = np.stack([r.tree_id for r in decomposition.rooted(g)])
        self.labels = decomposition.labels(g.n_edges)

    @property
    def L(self) -> int:
        return self.decomposition.L

    def update(self, p, ubar, t, out=None):
        p, ubar = self._check(p, ubar, t)
        if out is None:
            out = np.empty_like(p)
        posts, parents, pedges, nchilds = self._stacked
        g = self.g
        worst = _kernels.block_forest_update(posts, parents, pedges, nchilds, g.tails, g.heads,
                                             g.weights, p, ubar, float(t), out)
        scale = 1.0 + float(np.abs(ubar).max(initial=0.0)) / t + 2.0 * float(g.weights.max(initial=0.0))
        if worst > RETRIEVAL_TOL * scale:
            raise RetrievalError(f"dual retrieval residual {worst:.3e}")
        return out

    def normal_apply(self, x):
        # sum over forests of the projection onto ran K_l^T: remove tree means
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        for tid in self.tree_ids:
            k = int(tid.max()) + 1
            means = np.bincount(tid, x, k) / np.bincount(tid, minlength=k)
            out += x - means[tid]
        return out

    def T_norm_sq(self, x):
        x = np.asarray(x, dtype=np.float64)
        total = 0.0
        for es in self.decomposition.forests:
            xl = np.zeros_like(x)
            xl[es] = x[es]
            r = apply_KT(self.g, xl)
            total += float(r @ r)
        return total

    def dense_T(self):
        if self.g.n_edges > DENSE_EDGE_LIMIT:
            raise ValueError(f"dense metric limited to {DENSE_EDGE_LIMIT} edges")
        K = self.g.K_dense()
        T = np.zeros((self.g.n_edges, self.g.n_edges))
        for es in self.decomposition.forests:
            T[np.ix_(es, es)] = K[es] @ K[es].T
        return T

    def norm_cap(self):
        return float(self.L)


def build_block_forest(g: WeightedGraph, d: ForestDecomposition) -> BlockForestPreconditioner:
    return BlockForestPreconditioner(g, d)


def scaled_dual_update(P: Preconditioner, p, ubar, t) -> np.ndarray:
    return P.update(p, ubar, t)


def dense_T(P: Preconditioner) -> np.ndarray:
    if P.g.n_edges > DENSE_EDGE_LIMIT:
        raise ValueError(f"dense metric limited to {DENSE_EDGE_LIMIT} edges")
    return P.dense_T()


def operator_norm_sq(P: Preconditioner, g: WeightedGraph | None = None) -> float:
    return P.operator_norm_sq()


def dual_update_objective(P: Preconditioner, p_new, p, ubar, t) -> float:
    """``-<K ubar, p_new> + (t/2)||p_new - p||_T^2``."""
    return (-float(apply_K(P.g, ubar) @ p_new)
            + 0.5 * t * P.T_norm_sq(np.asarray(p_new) - np.asarray(p)))
