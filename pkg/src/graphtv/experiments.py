"""Desk-scale experiment presets and their building blocks."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import envelope_experiment, iteration_bound
from .graph import WeightedGraph, generate_grid, generate_random_graph, load_benchmark, write_dimacs
from .problems import rof_oracle, synth_deconv_instance, write_pgm
from .solvers import SolveConfig, solve

log = logging.getLogger(__name__)


def _reference_config(max_iter=5000):
    return SolveConfig(algorithm="pg", precond="inactively-nested", recondition=1, tol=1e-12,
                       max_iter=max_iter)


def solution_active_fraction(g: WeightedGraph, oracle, eps_active=1e-7) -> tuple[float, object]:
    res = solve(g, oracle, _reference_config())
    return float(np.mean(np.abs(res.p) >= 1 - eps_active)) if g.n_edges else 0.0, res


def bisect_lambda(g: WeightedGraph, f, band=(0.2, 0.5), max_solves: int = 30,
                  lo: float = 1e-4, hi: float = 1e2) -> tuple[float, float]:
    """Scale of the edge weights whose solution has an active fraction in ``band``.

    The active fraction falls as the scale grows; bisection runs on the
    log-scale towards the band centre and stops at the first scale inside
    the band. Returns ``(scale, fraction)``; raises if the budget runs out.
    """
    oracle = rof_oracle(f)
    a, b = math.log(lo), math.log(hi)
    target = 0.5 * (band[0] + band[1])
    for _ in range(max_solves):
        mid = 0.5 * (a + b)
        lam = math.exp(mid)
        frac, _ = solution_active_fraction(g.scaled(lam), oracle)
        if band[0] <= frac <= band[1]:
            return lam, frac
        if frac > target:
            a = mid
        else:
            b = mid
    raise RuntimeError(f"no scale with active fraction in {band} after {max_solves} solves")


@dataclass
class RunRecord:
    label: str
    iterations: int | None
    time_s: float | None
    final_gap: float
    trace: object = field(repr=False, default=None)


def run_strategies(g, oracle, strategies, base: SolveConfig, out_dir=None, prefix="",
                   gap_type=None) -> list[RunRecord]:
    """Solve with each ``(label, precond, recondition)`` and optionally write traces."""
    records = []
    gap_type = gap_type or base.gap_type
    for label, precond, n in strategies:
        cfg = SolveConfig(**{**base.as_dict(), "precond": precond, "recondition": n})
        res = solve(g, oracle, cfg)
        tr = res.trace
        it = tr.iterations_to_tol(base.tol, gap_type)
        rec = RunRecord(label, it, tr.time_to_tol(base.tol, gap_type), float(tr.gaps[-1]), tr)
        records.append(rec)
        if out_dir is not None:
            tr.to_csv(Path(out_dir) / f"{prefix}{label}.csv")
    return records


# --------------------------------------------------------------------------
# presets


def fig1_instance(seed: int, band=(0.2, 0.5), width=4, height=3):
    rng = np.random.default_rng(seed)
    g0 = generate_grid(width, height)
    f = rng.random(g0.n_vertices)
    lam, frac = bisect_lambda(g0, f, band)
    return g0.scaled(lam), rof_oracle(f), lam, frac


def run_fig1(seed=0, out_dir=None, iters=100, band=(0.2, 0.5), eps=1e-8) -> dict:
    """4x3 grid: PG with identity vs inactively-nested metric, plus the local envelope."""
    g, oracle, lam, frac = fig1_instance(seed, band)
    base = SolveConfig(algorithm="pg", tol=0.0, gap_type="absolute", max_iter=iters)
    recs = run_strategies(g, oracle, [("inactively-nested", "inactively-nested", 1),
                                      ("identity", "identity", None)],
                          base, out_dir, prefix="fig1_")
    gaps = {r.label: r.trace.gaps for r in recs}
    env = envelope_experiment(g, oracle)
    k_eps = env.iterations_to(eps)
    bound = iteration_bound(env.kbar, float(env.dist[0]), env.kappa_T, eps, env.phi)
    return {
        "seed": seed, "lambda": lam, "active_frac": frac,
        "nested_gap_100": float(gaps["inactively-nested"][min(iters, len(gaps["inactively-nested"]) - 1)]),
        "nested_iters_1e-10": recs[0].trace.iterations_to_tol(1e-10, "absolute"),
        "identity_gap_100": float(gaps["identity"][-1]),
        "kbar": env.kbar, "L": env.L, "L_eff": env.L_eff, "lhat": env.lhat, "nested": env.nested,
        "phi": env.phi, "phi_dense": env.phi_dense, "contraction": env.contraction,
        "envelope_worst_ratio": env.worst_ratio, "envelope_holds": env.holds,
        "complementary": env.complementary,
        "iters_after_kbar_to_eps": k_eps, "corollary_bound": bound,
        "measured_to_eps": None if k_eps is None else env.kbar + k_eps,
        "envelope": env,
    }


def run_fig2(ratios=(5.0,), bands=((0.3, 0.4), (0.5, 0.6), (0.7, 0.8)), seeds=range(5),
             n_vertices=512, max_iter=10000, out_dir=None) -> list[dict]:
    """Random graphs: iterations of PG to gap 1e-10 per metric and active fraction."""
    rows = []
    strategies = [("inactively-nested", "inactively-nested", 1),
                  ("nested-forest", "nested-forest", None),
                  ("identity", "identity", None)]
    for ratio in ratios:
        for band in bands:
            for seed in seeds:
                rng = np.random.default_rng(seed)
                g0 = generate_random_graph(n_vertices, int(round(ratio * n_vertices)), (0.0, 1.0),
                                           seed=seed)
                f = rng.random(n_vertices)
                lam, frac = bisect_lambda(g0, f, band)
                base = SolveConfig(algorithm="pg", tol=1e-10, gap_type="absolute",
                                   max_iter=max_iter)
                recs = run_strategies(g0.scaled(lam), rof_oracle(f), strategies, base, out_dir,
                                      prefix=f"fig2_r{ratio:g}_a{band[0]:g}_s{seed}_")
                row = {"ratio": ratio, "band": band, "seed": seed, "lambda": lam,
                       "active_frac": frac}
                row.update({r.label: r.iterations for r in recs})
                rows.append(row)
    return rows


def run_fig3(size=50, ns=(1, 5, 10, 20), seed=0, band=(0.25, 0.35), max_iter=50000,
             out_dir=None, include_chains=True) -> dict:
    """Grid: PG with inactively-nested metrics for several rebuild periods and baselines."""
    rng = np.random.default_rng(seed)
    g0 = generate_grid(size, size)
    f = rng.random(g0.n_vertices)
    lam, frac = bisect_lambda(g0, f, band)
    strategies = [(f"inactively-nested-n{n}", "inactively-nested", n) for n in ns]
    strategies += [("nested-forest", "nested-forest", None)]
    if include_chains:
        strategies += [("chains", "chains", None)]
    strategies += [("identity", "identity", None)]
    base = SolveConfig(algorithm="pg", tol=1e-10, gap_type="absolute", max_iter=max_iter)
    recs = run_strategies(g0.scaled(lam), rof_oracle(f), strategies, base, out_dir, prefix="fig3_")
    return {"lambda": lam, "active_frac": frac, "records": recs,
            "iterations": {r.label: r.iterations for r in recs}}


def run_fig4(dims=(32, 32), seed=0, noise_sigma=0.05, radius=3, lam=0.02, n=5, tol=1e-8,
             max_iter=20000, out_dir=None) -> dict:
    """PDHG on TV deconvolution with several dual metrics."""
    oracle, phantom = synth_deconv_instance(dims, seed=seed, noise_sigma=noise_sigma,
                                            radius=radius)
    g = generate_grid(dims[1], dims[0], weight=lam)
    strategies = [("inactively-nested", "inactively-nested", n),
                  ("diagonal-pock", "diagonal-pock", None),
                  ("diagonal", "diagonal", None),
                  ("nested-forest", "nested-forest", None),
                  ("chains", "chains", None)]
    base = SolveConfig(algorithm="pdhg", tol=tol, gap_type="relative", max_iter=max_iter)
    recs = run_strategies(g, oracle, strategies, base, out_dir, prefix="fig4_")
    if out_dir is not None:
        write_pgm(Path(out_dir) / "fig4_phantom.pgm", phantom.reshape(dims))
        H, W = dims
        write_pgm(Path(out_dir) / "fig4_observed.pgm",
                  np.asarray(oracle.f).reshape(H + oracle.kernel.shape[0] - 1,
                                               W + oracle.kernel.shape[1] - 1))
    return {"records": recs, "iterations": {r.label: r.iterations for r in recs},
            "cg_failures": oracle.cg_failures}


# --------------------------------------------------------------------------
# benchmark tables


def make_benchmark_dir(path, seed: int = 0) -> list[Path]:
    """Write small synthetic max-flow instances (grid and random) in DIMACS format."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    made = []
    specs = [("grid-24x24", generate_grid(24, 24)), ("grid-40x16", generate_grid(40, 16)),
             ("random-300", generate_random_graph(300, 1200, (0.0, 1.0), seed=seed))]
    for name, g0 in specs:
        w = np.round(rng.uniform(0.5, 2.0, g0.n_edges) * 100) / 100
        g = g0.with_weights(w * 0.1)
        f = np.round(rng.normal(0.0, 1.0, g.n_vertices) * 100) / 100
        out = path / f"{name}.max"
        write_dimacs(out, g, f)
        made.append(out)
    return made


BENCH_STRATEGIES = (("none", "identity", None), ("diagonal", "diagonal", None),
                    ("nested-forest", "nested-forest", None),
                    ("inactively-nested", "inactively-nested", 30))


def run_bench(bench_dir, tol=1e-10, max_iter=20000, algorithm="fista", recondition=30,
              out_dir=None) -> list[dict]:
    """FISTA on every benchmark file: iterations and time to relative gap ``tol``."""
    rows = []
    files = sorted(p for p in Path(bench_dir).iterdir()
                   if p.suffix in (".max", ".txt", ".edges") and p.is_file())
    for path in files:
        g, f = load_benchmark(path)
        oracle = rof_oracle(f)
        strategies = [(lab, pre, recondition if pre == "inactively-nested" else n)
                      for lab, pre, n in BENCH_STRATEGIES]
        if g.grid_shape is not None:
            strategies.insert(3, ("chains", "chains", None))
        base = SolveConfig(algorithm=algorithm, tol=tol, gap_type="relative", max_iter=max_iter)
        recs = run_strategies(g, oracle, strategies, base, out_dir, prefix=f"bench_{path.stem}_")
        af = recs[-1].trace.rows[-1]["active_frac"]
        row = {"name": path.stem + ("*" if g.grid_shape is not None else ""),
               "active_frac": af}
        for r in recs:
            row[r.label] = (r.iterations, r.time_s)
        rows.append(row)
    return rows


def _cell(entry, i, fmt):
    if entry is None:
        return "n/a"
    return "--" if entry[i] is None else fmt(entry[i])


def format_bench(rows) -> str:
    """Plain-text table; ``--`` marks runs that missed the tolerance, ``n/a`` strategies
    that do not apply (chains on non-grids)."""
    if not rows:
        return ""
    labels = []
    for r in rows:
        labels += [k for k in r if k not in ("name", "active_frac") and k not in labels]
    head = ["name", "active"] + [f"{lab}:it" for lab in labels] + [f"{lab}:s" for lab in labels]
    lines = ["\t".join(head)]
    for r in rows:
        its = [_cell(r.get(lab), 0, str) for lab in labels]
        ts = [_cell(r.get(lab), 1, lambda v: f"{v:.3f}") for lab in labels]
        lines.append("\t".join([r["name"], f"{r['active_frac']:.2f}"] + its + ts))
    return "\n".join(lines) + "\n"
