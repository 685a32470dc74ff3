"""Dual proximal gradient, FISTA and PDHG with forest reconditioning."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .forests import (DENSE_VERTEX_LIMIT, fixed_nested_forest, greedy_inactively_nested,
                      grid_chain_decomposition, nesting_profile)
from .graph import WeightedGraph, apply_K, apply_KT
from .precond import (BlockForestPreconditioner, IdentityPreconditioner, Preconditioner,
                      diagonal_preconditioner)

log = logging.getLogger(__name__)

ALGORITHMS = ("pg", "fista", "pdhg")
STRATEGIES = ("identity", "diagonal", "diagonal-pock", "nested-forest", "chains",
              "inactively-nested")
TRACE_COLUMNS = ("iter", "primal_obj", "dual_obj", "gap", "active_frac", "recond", "L", "lhat",
                 "time_s")


@dataclass
class SolveConfig:
    """Solver settings.

    ``recondition`` is the period ``n`` of metric rebuilds; ``None`` builds
    the metric once. ``t`` / ``s`` are the dual / primal steps, chosen
    automatically when ``None``. ``tol`` applies to the relative gap
    ``gap / (1 + |primal|)`` unless ``gap_type='absolute'``.
    """

    algorithm: str = "pg"
    precond: str = "inactively-nested"
    recondition: int | None = 1
    t: float | None = None
    s: float | None = None
    balance: float = 1.0
    tol: float = 1e-10
    gap_type: str = "relative"
    max_iter: int = 1000
    eps_active: float = 1e-7
    track_nesting: bool = False
    seed: int = 0

    def __post_init__(self):
        self.algorithm = self.algorithm.lower()
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.precond not in STRATEGIES:
            raise ValueError(f"unknown preconditioner strategy {self.precond!r}")
        if self.recondition is not None and (isinstance(self.recondition, float)
                                             and math.isinf(self.recondition)):
            self.recondition = None
        if self.recondition is not None and int(self.recondition) < 1:
            raise ValueError("recondition period must be a positive integer")
        for name in ("t", "s"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"step {name} must be positive")
        if self.gap_type not in ("relative", "absolute"):
            raise ValueError("gap_type must be 'relative' or 'absolute'")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class ConvergenceTrace:
    """Per-iteration records. Row ``k`` describes the iterate after ``k`` steps.

    ``recond`` on row ``k`` marks that the metric was rebuilt from that
    iterate before the next step.
    """

    rows: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    converged: bool = False
    notes: dict = field(default_factory=dict)

    def append(self, **row):
        self.rows.append(row)

    def column(self, name) -> np.ndarray:
        return np.array([np.nan if r[name] is None else r[name] for r in self.rows], dtype=float)

    @property
    def gaps(self) -> np.ndarray:
        return self.column("gap")

    def relative_gaps(self) -> np.ndarray:
        return self.gaps / (1.0 + np.abs(self.column("primal_obj")))

    def iterations_to_tol(self, tol: float, gap_type: str = "relative") -> int | None:
        """First iteration whose gap is at most ``tol``, or ``None``."""
        gaps = self.relative_gaps() if gap_type == "relative" else self.gaps
        hit = np.flatnonzero(gaps <= tol)
        return int(self.rows[hit[0]]["iter"]) if hit.size else None

    def time_to_tol(self, tol: float, gap_type: str = "relative") -> float | None:
        k = self.iterations_to_tol(tol, gap_type)
        return None if k is None else float(self.rows[k]["time_s"])

    def to_csv(self, path, with_time: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in self.rows:
                out = []
                for c in TRACE_COLUMNS:
                    v = r[c]
                    if c == "time_s" and not with_time:
                        v = ""
                    if v is None:
                        v = ""
                    elif isinstance(v, float):
                        v = repr(v)
                    elif isinstance(v, bool):
                        v = int(v)
                    out.append(v)
                w.writerow(out)

    def __len__(self):
        return len(self.rows)


class SolveResult(NamedTuple):
    u: np.ndarray
    p: np.ndarray
    trace: ConvergenceTrace


# --------------------------------------------------------------------------
# objectives


def primal_objective(g: WeightedGraph, oracle, u) -> float:
    return oracle.eval_G(u) + float(np.abs(apply_K(g, u)).sum())


def dual_objective(g: WeightedGraph, oracle, p) -> float:
    """``G*(-K^T p)``; minimized over the box, equals minus the primal optimum."""
    return oracle.eval_Gstar(-apply_KT(g, p))


def active_fraction(p, eps_active: float) -> float:
    p = np.asarray(p)
    return float(np.mean(np.abs(p) >= 1.0 - eps_active)) if p.size else 0.0


# --------------------------------------------------------------------------
# preconditioner construction


def build_preconditioner(g: WeightedGraph, strategy: str, p=None) -> Preconditioner:
    """Metric for ``strategy`` at dual point ``p`` (only used by inactively-nested)."""
    if strategy == "identity":
        return IdentityPreconditioner(g)
    if strategy == "diagonal":
        return diagonal_preconditioner(g, "kkt")
    if strategy == "diagonal-pock":
        return diagonal_preconditioner(g, "pock")
    if g.n_edges == 0:
        return IdentityPreconditioner(g)
    if strategy == "nested-forest":
        d = fixed_nested_forest(g)
    elif strategy == "chains":
        d = grid_chain_decomposition(g)
    elif strategy == "inactively-nested":
        d = greedy_inactively_nested(g, np.zeros(g.n_edges) if p is None else p)
    else:
        raise ValueError(f"unknown preconditioner strategy {strategy!r}")
    # peeled and chain decompositions are valid by construction
    return BlockForestPreconditioner(g, d, check=False)


def reconditioning_hook(g: WeightedGraph, p, k: int, config: SolveConfig,
                        current: Preconditioner | None) -> Preconditioner | None:
    """New metric if one is due at iteration ``k``, else ``None``.

    The first call (``current is None``) always builds. Afterwards only the
    inactively-nested strategy rebuilds, every ``config.recondition``
    iterations.
    """
    if current is None:
        return build_preconditioner(g, config.precond, p)
    if config.precond != "inactively-nested" or config.recondition is None:
        return None
    if k % int(config.recondition) != 0:
        return None
    return build_preconditioner(g, config.precond, p)


def _nesting_columns(g, P, p, config):
    L = getattr(P, "L", None)
    lhat = None
    if config.track_nesting and L is not None and g.n_vertices <= DENSE_VERTEX_LIMIT:
        inactive = np.flatnonzero(np.abs(p) < 1.0 - config.eps_active)
        prof = nesting_profile(P.decomposition, g, inactive)
        lhat = prof.lhat
    return L, lhat


# --------------------------------------------------------------------------
# solvers


class _Runner:
    """Bookkeeping shared by all three algorithms."""

    def __init__(self, g, oracle, config, precond):
        self.g, self.oracle, self.config = g, oracle, config
        self.trace = ConvergenceTrace(config=config.as_dict())
        self.P = precond
        self.fixed = precond is not None
        self.t0 = time.perf_counter()
        self.elapsed = 0.0

    def recondition(self, p, k) -> bool:
        if self.fixed and self.P is not None:
            return False
        new = reconditioning_hook(self.g, p, k, self.config, self.P)
        if new is None:
            return False
        self.P = new
        return True

    def record(self, k, u, p, recond):
        """Append row ``k``; returns True when the stopping test passes."""
        cfg = self.config
        primal = primal_objective(self.g, self.oracle, u)
        dual = dual_objective(self.g, self.oracle, p)
        gap = primal + dual
        self.elapsed = time.perf_counter() - self.t0
        L, lhat = _nesting_columns(self.g, self.P, p, cfg) if self.P is not None else (None, None)
        self.trace.append(iter=k, primal_obj=primal, dual_obj=dual, gap=gap,
                          active_frac=active_fraction(p, cfg.eps_active), recond=bool(recond),
                          L=L, lhat=lhat, time_s=self.elapsed)
        measure = gap / (1.0 + abs(primal)) if cfg.gap_type == "relative" else gap
        if not np.isfinite(gap):
            raise FloatingPointError(f"non-finite duality gap at iteration {k}")
        return measure <= cfg.tol

    def fix_recond_flag(self, recond):
        if recond and self.trace.rows:
            self.trace.rows[-1]["recond"] = True


def _initial_dual(g, p0):
    p = np.zeros(g.n_edges) if p0 is None else np.clip(np.array(p0, dtype=np.float64), -1, 1)
    if p.shape != (g.n_edges,):
        raise ValueError("initial dual point must have one entry per edge")
    return p


def _dual_step(oracle, P, config):
    return config.t if config.t is not None else oracle.L_Gstar * P.operator_norm_sq()


def _check_grad(oracle, config):
    if not getattr(oracle, "has_grad_Gstar", False):
        raise ValueError(f"{config.algorithm} needs a data term with grad_Gstar")
    if not (oracle.L_Gstar and oracle.l_Gstar and oracle.L_Gstar >= oracle.l_Gstar > 0):
        raise ValueError("data term needs finite curvature bounds 0 < l <= L")


def solve_pg(g: WeightedGraph, oracle, config: SolveConfig | None = None, *, p0=None,
             precond: Preconditioner | None = None, callback=None) -> SolveResult:
    """Dual (preconditioned) proximal gradient.

    ``p+ = argmin_box -<K u, p> + (t/2)||p - p_k||_T^2`` with
    ``u = grad G*(-K^T p_k)``. Passing ``precond`` freezes the metric.
    """
    config = config or SolveConfig(algorithm="pg")
    _check_grad(oracle, config)
    run = _Runner(g, oracle, config, precond)
    p = _initial_dual(g, p0)
    u = oracle.grad_Gstar(-apply_KT(g, p))
    t = None
    for k in range(config.max_iter + 1):
        recond = run.recondition(p, k) if k < config.max_iter else False
        if recond or t is None:
            t = _dual_step(oracle, run.P, config)
        if callback is not None:
            callback(k, p, u, run.P)
        if run.record(k, u, p, recond):
            run.trace.converged = True
            break
        if k == config.max_iter:
            break
        p = run.P.update(p, u, t)
        u = oracle.grad_Gstar(-apply_KT(g, p))
    run.trace.notes.update(t=t, precond=run.P.name)
    return SolveResult(u, p, run.trace)


def fista_beta(k: int) -> float:
    """Overrelaxation ``(k - 1) / (k + 2)`` for the ``k``-th step, ``k >= 1``."""
    return (k - 1) / (k + 2)


def solve_fista(g: WeightedGraph, oracle, config: SolveConfig | None = None, *, p0=None,
                precond: Preconditioner | None = None, callback=None) -> SolveResult:
    """Accelerated dual proximal gradient.

    The step from ``p_k`` uses the extrapolated point
    ``y = p_k + beta (p_k - p_{k-1})``; the step right after a metric rebuild
    uses ``beta = 0``. The counter inside ``beta`` is not reset.
    """
    config = config or SolveConfig(algorithm="fista")
    _check_grad(oracle, config)
    run = _Runner(g, oracle, config, precond)
    p = _initial_dual(g, p0)
    p_prev = p.copy()
    u = oracle.grad_Gstar(-apply_KT(g, p))
    t = None
    betas = []
    for k in range(config.max_iter + 1):
        recond = run.recondition(p, k) if k < config.max_iter else False
        if recond or t is None:
            t = _dual_step(oracle, run.P, config)
        if callback is not None:
            callback(k, p, u, run.P)
        if run.record(k, u, p, recond):
            run.trace.converged = True
            break
        if k == config.max_iter:
            break
        beta = 0.0 if recond else fista_beta(k + 1)
        betas.append(beta)
        y = p + beta * (p - p_prev) if beta else p
        uy = oracle.grad_Gstar(-apply_KT(g, y))
        p_prev = p
        p = run.P.update(y, uy, t)
        u = oracle.grad_Gstar(-apply_KT(g, p))
    run.trace.notes.update(t=t, precond=run.P.name, betas=betas)
    return SolveResult(u, p, run.trace)


def pdhg_steps(opnorm: float, config: SolveConfig) -> tuple[float, float]:
    """Primal / dual steps with ``s t >= opnorm (1 + 1e-3)``."""
    if config.s is not None and config.t is not None:
        return config.s, config.t
    if opnorm <= 0:
        return config.s or 1.0, config.t or 1.0
    if config.s is not None:
        return config.s, opnorm * (1 + 1e-3) / config.s
    if config.t is not None:
        return opnorm * (1 + 1e-3) / config.t, config.t
    s = math.sqrt(opnorm) * config.balance
    return s, opnorm * (1 + 1e-3) / s


def solve_pdhg(g: WeightedGraph, oracle, config: SolveConfig | None = None, *, p0=None, u0=None,
               precond: Preconditioner | None = None, callback=None) -> SolveResult:
    """Primal-dual hybrid gradient with a forest (or diagonal) dual metric.

    ``u+ = prox_G(u - K^T p / s, s)``, ``ubar = 2 u+ - u`` and the dual step
    is the scaled update in the current metric. Steps are re-selected after
    every rebuild.
    """
    config = config or SolveConfig(algorithm="pdhg")
    if not getattr(oracle, "has_prox_G", False):
        raise ValueError("pdhg needs a data term with prox_G")
    run = _Runner(g, oracle, config, precond)
    p = _initial_dual(g, p0)
    u = np.zeros(g.n_vertices) if u0 is None else np.array(u0, dtype=np.float64)
    if hasattr(oracle, "reset_warm_start"):
        oracle.reset_warm_start()
    s = t = None
    for k in range(config.max_iter + 1):
        recond = run.recondition(p, k) if k < config.max_iter else False
        if recond or s is None:
            s, t = pdhg_steps(run.P.operator_norm_sq(), config)
        if callback is not None:
            callback(k, p, u, run.P)
        if run.record(k, u, p, recond):
            run.trace.converged = True
            break
        if k == config.max_iter:
            break
        u_new = oracle.prox_G(u - apply_KT(g, p) / s, s)
        ubar = 2.0 * u_new - u
        p = run.P.update(p, ubar, t)
        u = u_new
    run.trace.notes.update(s=s, t=t, precond=run.P.name)
    return SolveResult(u, p, run.trace)


def solve(g: WeightedGraph, oracle, config: SolveConfig, **kw) -> SolveResult:
    fn = {"pg": solve_pg, "fista": solve_fista, "pdhg": solve_pdhg}[config.algorithm]
    return fn(g, oracle, config, **kw)
