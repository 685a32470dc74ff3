"""Active sets, condition numbers and local linear rates.

Dense routines here are meant for small graphs: they form ``T``,
``T^{-1/2}`` and pseudoinverses explicitly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .forests import RANK_RTOL, ForestDecomposition, nesting_profile
from .graph import WeightedGraph, apply_K, apply_KT
from .precond import DENSE_EDGE_LIMIT, BlockForestPreconditioner, Preconditioner

DEFAULT_EPS_ACTIVE = 1e-7


@dataclass(frozen=True)
class ActiveSetReport:
    active: np.ndarray
    inactive: np.ndarray
    margin: np.ndarray

    @property
    def fraction(self) -> float:
        n = self.active.size + self.inactive.size
        return self.active.size / n if n else 0.0


def active_set(p, eps_active: float = DEFAULT_EPS_ACTIVE) -> ActiveSetReport:
    """Edges with ``|p_e| >= 1 - eps_active``."""
    p = np.asarray(p, dtype=np.float64)
    margin = 1.0 - np.abs(p)
    act = margin <= eps_active
    return ActiveSetReport(np.flatnonzero(act), np.flatnonzero(~act), margin)


def duality_gap(g: WeightedGraph, oracle, u, p) -> float:
    """``G(u) + ||K u||_1 + G*(-K^T p)`` (signed, for diagnostics)."""
    p = np.asarray(p, dtype=np.float64)
    if p.size and np.abs(p).max() > 1.0 + 1e-8:
        raise ValueError("dual point is infeasible (|p| > 1)")
    return (oracle.eval_G(u) + float(np.abs(apply_K(g, u)).sum())
            + oracle.eval_Gstar(-apply_KT(g, p)))


def singular_values(M) -> np.ndarray:
    return np.linalg.svd(np.atleast_2d(np.asarray(M, dtype=np.float64)), compute_uv=False)


def kappa(M) -> float:
    """Finite condition number ``sigma_max / sigma_min>0``."""
    M = np.asarray(M, dtype=np.float64)
    if M.size > DENSE_EDGE_LIMIT * DENSE_EDGE_LIMIT:
        raise ValueError("matrix too large for a dense condition number")
    s = singular_values(M)
    if s.size == 0 or s[0] == 0:
        raise ValueError("condition number of a zero matrix")
    return float(s[0] / s[s > RANK_RTOL * s[0]][-1])


def spectrum_bounds(eigs, rtol: float = RANK_RTOL) -> tuple[float, float]:
    """``(lambda_max, lambda_min>0)`` of a PSD spectrum."""
    eigs = np.asarray(eigs)
    lmax = float(eigs.max(initial=0.0))
    pos = eigs[eigs > rtol * max(lmax, 1e-300)]
    return lmax, float(pos.min()) if pos.size else 0.0


def inv_sqrt_psd(T) -> np.ndarray:
    w, V = np.linalg.eigh(T)
    if w.min() <= 0:
        raise np.linalg.LinAlgError("metric is not positive definite")
    return (V / np.sqrt(w)) @ V.T


def _range_projector(B) -> np.ndarray:
    """Orthogonal projector onto ``ran B`` with the rank threshold applied."""
    if B.size == 0:
        return np.zeros((B.shape[0], B.shape[0]))
    U, s, _ = np.linalg.svd(B, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((B.shape[0], B.shape[0]))
    Ur = U[:, s > RANK_RTOL * s[0]]
    return Ur @ Ur.T


def _as_mask(n, idx):
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(idx, dtype=np.int64)] = True
    return mask


@dataclass
class ProjectorReport:
    """``Pi_I`` assembled two ways plus its spectrum."""

    direct: np.ndarray
    summed: np.ndarray
    parts: list
    eigenvalues: np.ndarray
    mismatch: float
    lambda_max: float
    lambda_min_pos: float

    @property
    def consistent(self) -> bool:
        return self.mismatch <= 1e-8


def projector_direct(g: WeightedGraph, T, active) -> np.ndarray:
    """``K^T T^{-1/2} (I - B B^+) T^{-1/2} K`` with ``B = T^{-1/2} P_A``."""
    K = g.K_dense()
    Tis = inv_sqrt_psd(T)
    B = Tis[:, np.asarray(active, dtype=np.int64)]
    PiU = np.eye(g.n_edges) - _range_projector(B)
    M = Tis @ K
    return M.T @ PiU @ M


def projector_parts(g: WeightedGraph, d: ForestDecomposition, inactive) -> list[np.ndarray]:
    """Orthogonal projectors onto the span of inactive incidence rows per forest."""
    inactive_mask = _as_mask(g.n_edges, inactive)
    D = g.incidence_dense()
    parts = []
    for es in d.forests:
        es = np.asarray(es)
        rows = D[es[inactive_mask[es]]]
        parts.append(_range_projector(rows.T))
    return parts


def inactive_projector(g: WeightedGraph, d: ForestDecomposition, inactive) -> ProjectorReport:
    """``Pi_I`` from its definition and as a sum of per-forest projectors."""
    if g.n_edges > DENSE_EDGE_LIMIT:
        raise ValueError(f"dense projector limited to {DENSE_EDGE_LIMIT} edges")
    P = BlockForestPreconditioner(g, d)
    active = np.flatnonzero(~_as_mask(g.n_edges, inactive))
    direct = projector_direct(g, P.dense_T(), active)
    parts = projector_parts(g, d, inactive)
    summed = np.sum(parts, axis=0) if parts else np.zeros((g.n_vertices, g.n_vertices))
    eigs = np.linalg.eigvalsh(0.5 * (direct + direct.T))
    lmax, lmin = spectrum_bounds(eigs)
    return ProjectorReport(direct, summed, parts, eigs,
                           float(np.linalg.norm(direct - summed)), lmax, lmin)


def local_condition(g: WeightedGraph, P: Preconditioner, active) -> tuple[float, float]:
    """Extreme nonzero eigenvalues of ``(Pi_U T^{-1/2} K)^T (Pi_U T^{-1/2} K)`` for any metric."""
    M = projector_direct(g, P.dense_T(), active)
    return spectrum_bounds(np.linalg.eigvalsh(0.5 * (M + M.T)))


def theorem1_phi(g: WeightedGraph, P: Preconditioner, active, kappa_Gstar: float = 1.0) -> float:
    """``kappa(Pi_U T^{-1/2} K)^2 * kappa(G*)``, computed densely."""
    lmax, lmin = local_condition(g, P, active)
    if lmin == 0:
        return 1.0 * kappa_Gstar
    return lmax / lmin * kappa_Gstar


@dataclass(frozen=True)
class RateReport:
    L: int
    lhat: int
    kappa_Gstar: float
    phi: float
    contraction: float
    extra: dict = field(default_factory=dict)


def local_rate(L: int, lhat: int, kappa_Gstar: float = 1.0) -> RateReport:
    """``phi = (L / lhat) * kappa(G*)`` and contraction ``(phi - 1) / (phi + 1)``."""
    if not (lhat >= 1 and L >= lhat):
        raise ValueError("need L >= lhat >= 1")
    if not kappa_Gstar >= 1:
        raise ValueError("kappa(G*) must be at least 1")
    phi = L / lhat * kappa_Gstar
    return RateReport(int(L), int(lhat), float(kappa_Gstar), phi, (phi - 1) / (phi + 1))


def contraction(phi: float) -> float:
    return (phi - 1.0) / (phi + 1.0)


def iteration_bound(kbar: int, dist: float, kappa_T: float, eps: float, phi: float) -> int:
    """``kbar + ceil((phi + 1)/2 * log(dist * sqrt(kappa_T) / eps))``, at least ``kbar``."""
    if not (dist >= 0 and kappa_T >= 1 and eps > 0 and phi >= 1):
        raise ValueError("iteration_bound needs dist >= 0, kappa_T >= 1, eps > 0, phi >= 1")
    arg = dist * math.sqrt(kappa_T) / eps
    if arg <= 1.0:
        return int(kbar)
    return int(kbar) + math.ceil((phi + 1) / 2 * math.log(arg))


def lemma1_step(l_h: float, L_h: float, sigma_max: float, sigma_min_pos: float) -> float:
    """Dual step ``t`` with ``1/t = 2 / (L_h sigma_max^2 + l_h sigma_min>0^2)``."""
    return 0.5 * (L_h * sigma_max ** 2 + l_h * sigma_min_pos ** 2)


def _random_spd(n, l_h, L_h, rng):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = rng.uniform(l_h, L_h, n)
    w[0], w[-1] = l_h, L_h
    return (Q * w) @ Q.T


def lemma1_verify(A, l_h: float, L_h: float, trials: int = 1, iters: int = 50,
                  seed: int = 0, H=None) -> dict:
    """Gradient descent on ``0.5 (Ax + b - c)^T H (Ax + b - c)`` with the optimal step.

    For each trial a Hessian ``H`` with spectrum in ``[l_h, L_h]`` is drawn
    (unless given) and the per-step ratio ``||x+ - x*|| / ||x - x*||`` is
    compared with ``(phi - 1)/(phi + 1)``, ``phi = kappa(A)^2 L_h / l_h``.
    The start differs from ``x*`` by a vector in ``ker(A)^perp``. Gradient
    descent is translation invariant, so the error ``x - x*`` is iterated
    directly (``b = c``); measuring it as a difference of iterates would
    drown the ratios in roundoff once the error is small.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    m, n = A.shape
    rng = np.random.default_rng(seed)
    s = singular_values(A)
    smax = s[0]
    smin = s[s > RANK_RTOL * smax][-1]
    phi = (smax / smin) ** 2 * (L_h / l_h)
    rate = (phi - 1) / (phi + 1)
    t = lemma1_step(l_h, L_h, smax, smin)
    _, _, Vt = np.linalg.svd(A)
    row_basis = Vt[: int(np.sum(s > RANK_RTOL * smax))].T
    worst = 0.0
    for _ in range(trials):
        Hm = _random_spd(m, l_h, L_h, rng) if H is None else np.asarray(H)
        e = row_basis @ rng.standard_normal(row_basis.shape[1])
        err = e0 = np.linalg.norm(e)
        for _ in range(iters):
            e = e - A.T @ (Hm @ (A @ e)) / t
            new = np.linalg.norm(e)
            # below this, roundoff left in ker(A) (which never decays) would
            # show up in the ratios; it enters the norm in quadrature
            if err <= 1e-10 * e0:
                break
            worst = max(worst, new / err)
            err = new
    return {"phi": phi, "rate": rate, "step_t": t, "worst_ratio": worst,
            "passed": worst <= rate * (1 + 1e-10) + 1e-15, "trials": trials}


# --------------------------------------------------------------------------
# identification and local envelope


def identification_index(active_sets, final=None) -> int:
    """First index after which the active set equals ``final`` (default: the last)."""
    if not active_sets:
        raise ValueError("no active sets given")
    final = active_sets[-1] if final is None else final
    final = frozenset(np.asarray(final).tolist())
    k = len(active_sets)
    while k > 0 and frozenset(np.asarray(active_sets[k - 1]).tolist()) == final:
        k -= 1
    return k


def strict_complementarity(g: WeightedGraph, oracle, p, eps_active=DEFAULT_EPS_ACTIVE,
                           tol: float = 1e-7) -> bool:
    """Edges with ``(K grad G*(-K^T p))_e = 0`` must be strictly inactive."""
    u = oracle.grad_Gstar(-apply_KT(g, p))
    Ku = apply_K(g, u)
    zero = np.abs(Ku) <= tol * max(1.0, float(np.abs(u).max(initial=0.0)))
    return bool(np.all(np.abs(np.asarray(p)[zero]) < 1.0 - eps_active))


@dataclass
class EnvelopeReport:
    kbar: int
    active: np.ndarray
    phi: float
    phi_dense: float
    contraction: float
    L: int
    L_eff: int
    lhat: int | None
    nested: bool
    step_t: float
    dist_T: np.ndarray
    dist: np.ndarray
    envelope: np.ndarray
    worst_ratio: float
    holds: bool
    kappa_T: float
    p_star: np.ndarray
    u_star: np.ndarray
    identified: bool
    complementary: bool
    extra: dict = field(default_factory=dict)

    def iterations_to(self, eps: float) -> int | None:
        """Iterations after ``kbar`` until ``||p - p*|| <= eps``."""
        hit = np.flatnonzero(self.dist <= eps)
        return int(hit[0]) if hit.size else None


def envelope_experiment(g: WeightedGraph, oracle, *, eps_active: float = DEFAULT_EPS_ACTIVE,
                        max_iter: int = 500, tail_iter: int = 400,
                        floor: float = 1e-11) -> EnvelopeReport:
    """Check the local linear envelope of preconditioned PG.

    PG with the inactively-nested metric rebuilt every iteration is run to
    convergence and the identification index ``kbar`` is read off. From
    ``p^kbar`` the metric is frozen and PG continues with the locally
    optimal step; the distances ``||p^k - p*||_T`` are compared with
    ``c^(k - kbar) ||p^kbar - p*||_T``, ``c = (phi - 1)/(phi + 1)``.
    ``p*`` is the limit of the frozen run (the dual solution need not be
    unique when inactive edges form cycles). Envelope values below the
    absolute ``floor`` are not tested (roundoff level).
    """
    from .solvers import SolveConfig, solve_pg

    iterates, metrics = [], []

    def keep(k, p, u, P):
        iterates.append(p.copy())
        metrics.append(P)

    cfg = SolveConfig(algorithm="pg", precond="inactively-nested", recondition=1,
                      tol=1e-15, gap_type="absolute", max_iter=max_iter, eps_active=eps_active)
    first = solve_pg(g, oracle, cfg, callback=keep)
    sets = [active_set(p, eps_active).active for p in iterates]
    A_final = sets[-1]
    kbar = identification_index(sets)
    identified = kbar < len(sets) - 1
    kbar = min(kbar, len(sets) - 1)
    p_kbar = iterates[kbar]
    P = metrics[kbar]
    if not isinstance(P, BlockForestPreconditioner):
        raise TypeError("envelope experiment expects a forest metric")
    inactive = np.setdiff1d(np.arange(g.n_edges), A_final)
    prof = nesting_profile(P.decomposition, g, inactive)
    lmax, lmin = local_condition(g, P, A_final)
    kG = oracle.L_Gstar / oracle.l_Gstar
    phi_dense = lmax / lmin * kG if lmin > 0 else kG
    if prof.nested or (prof.chain and prof.lhat is not None):
        phi = local_rate(prof.L_eff, prof.lhat, kG).phi
    else:
        phi = phi_dense
    t = lemma1_step(oracle.l_Gstar, oracle.L_Gstar, math.sqrt(lmax), math.sqrt(lmin)) \
        if lmin > 0 else oracle.L_Gstar * lmax

    tail = []
    frozen = SolveConfig(algorithm="pg", precond="inactively-nested", recondition=None, t=t,
                         tol=0.0, gap_type="absolute", max_iter=tail_iter, eps_active=eps_active)
    res = solve_pg(g, oracle, frozen, p0=p_kbar, precond=P,
                   callback=lambda k, p, u, _P: tail.append(p.copy()))
    p_star = tail[-1]
    T = P.dense_T()
    wT = np.linalg.eigvalsh(T)
    kappa_T = float(wT[-1] / wT[0])
    dT = np.array([math.sqrt(max(P.T_norm_sq(p - p_star), 0.0)) for p in tail])
    d2 = np.array([np.linalg.norm(p - p_star) for p in tail])
    c = contraction(phi)
    env = dT[0] * c ** np.arange(len(tail))
    # distances carry an absolute roundoff of about ``floor / 100``
    test = env > floor
    test[-1] = False
    excess = np.maximum(dT - 0.01 * floor, 0.0)
    ratio = np.where(test, excess / np.maximum(env, 1e-300), 0.0)
    worst = float(ratio.max(initial=0.0))
    return EnvelopeReport(kbar=kbar, active=A_final, phi=phi, phi_dense=phi_dense, contraction=c,
                          L=prof.L, L_eff=prof.L_eff, lhat=prof.lhat, nested=prof.nested,
                          step_t=t, dist_T=dT, dist=d2, envelope=env, worst_ratio=worst,
                          holds=worst <= 1.0 + 1e-6, kappa_T=kappa_T, p_star=p_star,
                          u_star=res.u, identified=identified,
                          complementary=strict_complementarity(g, oracle, p_star, eps_active),
                          extra={"first_trace": first.trace})
