"""Independent references for tests: exhaustive box-QP, high-accuracy
solutions and finite-difference checks.

Nothing here uses the tree message passing, so it can be used to check it.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

#: enumeration visits 3^m sign patterns
MAX_ENUM_EDGES = 12


@dataclass
class ExactSolution:
    """Primal-dual pair with its certificate.

    ``u`` is the primal point paired with ``p``; for :func:`exact_box_qp`
    this is ``K^T p + f``, the TV proximum of ``f``.
    """

    p: np.ndarray
    u: np.ndarray
    active: np.ndarray
    residual: float
    objective: float = float("nan")
    info: dict = field(default_factory=dict)


def _pattern_code(digits: np.ndarray) -> np.ndarray:
    """Lexicographic rank of patterns with digits 0 (free), 1 (-1), 2 (+1).

    Ranking free first makes ties (only possible when rows are dependent)
    resolve to the most interior pattern, e.g. ``p = 0`` for ``f = 0``.
    """
    m = digits.shape[-1]
    return digits @ (3 ** np.arange(m - 1, -1, -1, dtype=np.int64))


def exact_box_qp(K, f, tol: float = 1e-10) -> ExactSolution:
    """``argmin_{|p|_inf <= 1} 0.5 ||K^T p + f||^2`` by enumerating active patterns.

    Every edge is either at ``-1``, at ``+1`` or free. For each pattern the
    free coordinates solve a least-squares problem; a pattern is kept if the
    free values lie in the box and the gradient ``g = K (K^T p + f)`` has
    the sign that keeps bound coordinates at their bound. The best kept
    candidate is returned, ties broken by lexicographic pattern order
    (free < -1 < +1 per edge).

    All patterns sharing the same number of free edges are processed as one
    batched pseudoinverse. Free sets with dependent rows (cycles) use the
    minimum-norm least-squares solution, so exactness is only guaranteed
    when ``K`` has independent rows (forests).

    Parameters
    ----------
    K : (m, n) array
        Dense weighted incidence, ``m <= 12``.
    f : (n,) array
    tol : float
        Relative tolerance for box and sign checks.
    """
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    f = np.asarray(f, dtype=np.float64)
    m, n = K.shape
    if m > MAX_ENUM_EDGES:
        raise ValueError(f"enumeration limited to {MAX_ENUM_EDGES} edges, got {m}")
    if f.shape != (n,):
        raise ValueError("f must have one entry per column of K")
    if m == 0:
        return ExactSolution(np.zeros(0), f.copy(), np.zeros(0, dtype=np.int64), 0.0,
                             0.5 * float(f @ f))
    scale = max(1.0, float(np.abs(K).sum(axis=1).max()) * (1.0 + float(np.abs(f).max())))
    gtol = tol * scale

    best = None  # (objective, code, p)
    for k in range(m + 1):
        combos = list(itertools.combinations(range(m), k))
        free_sets = np.array(combos, dtype=np.int64).reshape(len(combos), k)
        act_sets = np.array([np.setdiff1d(np.arange(m), F) for F in free_sets],
                            dtype=np.int64).reshape(len(free_sets), m - k)
        prods = list(itertools.product((-1.0, 1.0), repeat=m - k))
        signs = np.array(prods).reshape(len(prods), m - k)
        C, S = len(free_sets), len(signs)
        P = np.zeros((C, S, m))
        rows = np.arange(C)[:, None, None]
        P[rows, np.arange(S)[None, :, None], act_sets[:, None, :]] = signs[None, :, :]
        if k > 0:
            # residual from the bound coordinates, then least squares in the free ones
            R = P @ K + f                          # (C, S, n)
            KtF = np.transpose(K[free_sets], (0, 2, 1))   # (C, n, k)
            pinv = np.linalg.pinv(KtF, rcond=1e-12)       # (C, k, n)
            PF = -R @ np.transpose(pinv, (0, 2, 1))       # (C, S, k)
            P[rows, np.arange(S)[None, :, None], free_sets[:, None, :]] = PF
        U = P @ K + f
        G = U @ K.T
        obj = 0.5 * np.einsum("csn,csn->cs", U, U)

        ok = np.ones((C, S), dtype=bool)
        if k > 0:
            pf = np.take_along_axis(P, np.broadcast_to(free_sets[:, None, :], (C, S, k)), axis=2)
            gf = np.take_along_axis(G, np.broadcast_to(free_sets[:, None, :], (C, S, k)), axis=2)
            ok &= np.all(np.abs(pf) <= 1.0 + tol, axis=2)
            ok &= np.all(np.abs(gf) <= gtol, axis=2)
        if k < m:
            ga = np.take_along_axis(G, np.broadcast_to(act_sets[:, None, :], (C, S, m - k)), axis=2)
            # at +1 the objective must not decrease towards the interior
            ok &= np.all(signs[None, :, :] * ga <= gtol, axis=2)
        if not ok.any():
            continue
        digits = np.zeros((C, S, m), dtype=np.int64)
        digits[rows, np.arange(S)[None, :, None], act_sets[:, None, :]] = 1 + (signs[None] > 0)
        codes = _pattern_code(digits)
        cand = np.flatnonzero(ok.ravel())
        objs = obj.ravel()[cand]
        lo = objs.min()
        close = cand[objs <= lo + 1e-14 * max(1.0, abs(lo))]
        pick = close[np.argmin(codes.ravel()[close])]
        entry = (float(obj.ravel()[pick]), int(codes.ravel()[pick]), P.reshape(-1, m)[pick].copy())
        if best is None or entry[0] < best[0] - 1e-14 * max(1.0, abs(best[0])) or (
                abs(entry[0] - best[0]) <= 1e-14 * max(1.0, abs(best[0])) and entry[1] < best[1]):
            best = entry
    if best is None:
        raise ArithmeticError("no pattern satisfied the optimality conditions")
    _, _, p = best
    p = np.clip(p, -1.0, 1.0)
    u = K.T @ p + f
    g = K @ u
    free = np.abs(p) < 1.0
    res = max(float(np.abs(g[free]).max(initial=0.0)),
              float(np.maximum(p[~free] * g[~free], 0.0).max(initial=0.0)))
    return ExactSolution(p, u, np.flatnonzero(~free), res, 0.5 * float(u @ u))


def fd_gradient_check(oracle, trials: int = 10, h: float = 1e-6, rtol: float = 1e-5,
                      seed: int = 0) -> dict:
    """Compare ``grad_Gstar`` with central differences of ``eval_Gstar``.

    Returns a report with the worst relative error over ``trials`` random
    points and directions; ``passed`` is ``worst <= rtol``.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        w = rng.standard_normal(oracle.n)
        d = rng.standard_normal(oracle.n)
        d /= np.linalg.norm(d)
        fd = (oracle.eval_Gstar(w + h * d) - oracle.eval_Gstar(w - h * d)) / (2 * h)
        an = float(oracle.grad_Gstar(w) @ d)
        worst = max(worst, abs(fd - an) / max(1.0, abs(an)))
    return {"trials": trials, "h": h, "worst_rel_err": worst, "passed": worst <= rtol}


def prox_residual_check(oracle, trials: int = 5, seed: int = 0) -> dict:
    """Optimality of ``prox_G`` for quadratic data terms.

    For ``G(u) = 0.5||Au - f||^2`` the prox ``u`` of ``z`` with weight ``s``
    satisfies ``A^T(Au - f) + s(u - z) = 0``; the gradient of ``G`` is taken
    by central differences of ``eval_G`` along random directions so this
    also cross-checks ``eval_G``.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    h = 1e-6
    for _ in range(trials):
        z = rng.standard_normal(oracle.n)
        s = float(rng.uniform(0.1, 10.0))
        u = oracle.prox_G(z, s)
        d = rng.standard_normal(oracle.n)
        d /= np.linalg.norm(d)
        dG = (oracle.eval_G(u + h * d) - oracle.eval_G(u - h * d)) / (2 * h)
        r = dG + s * float((u - z) @ d)
        worst = max(worst, abs(r) / max(1.0, s * float(np.linalg.norm(z))))
    return {"trials": trials, "worst_rel_residual": worst}


class ReferenceMismatch(ArithmeticError):
    """Two independent solver runs disagree; the instance is unusable as a reference."""


def reference_solution(g, oracle, tol: float = 1e-13, eps_active: float = 1e-7,
                       agree_tol: float = 1e-6, max_iter: int = 20000) -> ExactSolution:
    """High-accuracy ROF-type solution cross-validated by two metrics.

    FISTA with reconditioned inactively-nested metrics is run to absolute gap
    ``tol``; FISTA with the identity metric is run independently to the
    looser of ``tol`` and ``1e-11``. The primal points must agree to
    ``agree_tol`` in the max norm, otherwise :class:`ReferenceMismatch` is
    raised. Requires a differentiable conjugate data term.
    """
    from .analysis import duality_gap
    from .solvers import SolveConfig, solve

    main = solve(g, oracle, SolveConfig(algorithm="fista", precond="inactively-nested",
                                        recondition=1, tol=tol, gap_type="absolute",
                                        max_iter=max_iter))
    check = solve(g, oracle, SolveConfig(algorithm="fista", precond="identity", recondition=None,
                                         tol=max(tol, 1e-11), gap_type="absolute",
                                         max_iter=20 * max_iter))
    diff = float(np.abs(main.u - check.u).max(initial=0.0))
    if diff > agree_tol:
        raise ReferenceMismatch(f"metric runs disagree in u by {diff:.3e}")
    gap = duality_gap(g, oracle, main.u, main.p)
    active = np.flatnonzero(np.abs(main.p) >= 1.0 - eps_active)
    return ExactSolution(main.p.copy(), main.u.copy(), active, abs(gap),
                         oracle.eval_G(main.u) + float(np.abs(g.weights * (main.u[g.tails] - main.u[g.heads])).sum()),
                         {"u_disagreement": diff, "iterations": len(main.trace) - 1,
                          "converged": main.trace.converged and check.trace.converged})
