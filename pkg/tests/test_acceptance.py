"""Acceptance criteria at their stated tolerances; each prints one PASS/FAIL line."""
import time

import numpy as np
import pytest

from graphtv.analysis import inactive_projector, lemma1_verify
from graphtv.experiments import run_fig1, run_fig2, run_fig3, run_fig4
from graphtv.forests import ForestDecomposition, greedy_inactively_nested, nesting_profile
from graphtv.graph import WeightedGraph, apply_KT, generate_grid, generate_random_graph
from graphtv.oracle import exact_box_qp
from graphtv.problems import rof_oracle
from graphtv.solvers import SolveConfig, solve
from graphtv.treeprox import retrieve_dual, tv_on_forest

from conftest import random_forest_graph


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail, seconds):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} ({seconds:.1f}s) {detail}")
    return emit


def _iters(v):
    return np.inf if v is None else v


def test_criterion_01_tree_prox_exactness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_primal = worst_resid = 0.0
    for _ in range(200):
        nv = int(rng.integers(2, 11))
        tree = random_forest_graph(rng, nv, w_range=(0.1, 2.0))
        keep = rng.random(tree.n_edges) < 0.8  # drop edges: forests with several trees
        keep[0] = True
        g = WeightedGraph(nv, tree.tails[keep], tree.heads[keep], tree.weights[keep])
        forest = ForestDecomposition(nv, (np.arange(g.n_edges),)).rooted(g)[0]
        f = rng.uniform(-3, 3, nv)
        v = tv_on_forest(g, forest, f)
        ex = exact_box_qp(g.K_dense(), f)
        p = retrieve_dual(g, forest, f, v, clamp=False)
        worst_primal = max(worst_primal, float(np.abs(v - ex.u).max()))
        worst_resid = max(worst_resid, float(np.abs(apply_KT(g, p) - (v - f)).max()))
    dt = time.perf_counter() - t0
    ok = worst_primal <= 1e-8 and worst_resid <= 1e-8 and dt < 10
    report(1, ok, f"primal {worst_primal:.1e}, retrieval residual {worst_resid:.1e}", dt)
    assert ok


def _random_graph(rng, max_v):
    nv = int(rng.integers(3, max_v + 1))
    return random_forest_graph(rng, nv, extra_edges=int(rng.integers(0, 2 * nv)))


def test_criterion_02_projector_identity(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst_mismatch = worst_idem = 0.0
    ranks_ok = True
    for _ in range(50):
        g = _random_graph(rng, 30)
        p = rng.uniform(-1, 1, g.n_edges)
        p[rng.random(g.n_edges) < 0.4] = np.sign(rng.standard_normal())
        inactive = np.flatnonzero(rng.random(g.n_edges) < 0.6)
        d = greedy_inactively_nested(g, p)
        rep = inactive_projector(g, d, inactive)
        worst_mismatch = max(worst_mismatch, rep.mismatch)
        for part, es in zip(rep.parts, d.forests):
            worst_idem = max(worst_idem, float(np.linalg.norm(part @ part - part)),
                             float(np.linalg.norm(part - part.T)))
            s = np.linalg.svd(part, compute_uv=False)
            rank = int(np.sum(s > 1e-9 * max(s[0], 1e-300))) if s[0] > 1e-12 else 0
            ranks_ok &= rank == int(np.isin(es, inactive).sum())
    dt = time.perf_counter() - t0
    ok = worst_mismatch <= 1e-8 and worst_idem <= 1e-10 and ranks_ok and dt < 30
    report(2, ok, f"mismatch {worst_mismatch:.1e}, idempotency {worst_idem:.1e}, "
                  f"ranks {'ok' if ranks_ok else 'wrong'}", dt)
    assert ok


def test_criterion_03_nested_spectra(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    all_nested = True
    for _ in range(50):
        g = _random_graph(rng, 30)  # a spanning tree plus chords: connected
        d = greedy_inactively_nested(g, np.zeros(g.n_edges))
        prof = nesting_profile(d, g, np.arange(g.n_edges))
        all_nested &= prof.nested
        rep = inactive_projector(g, d, np.arange(g.n_edges))
        worst = max(worst, abs(rep.lambda_max - prof.L), abs(rep.lambda_min_pos - prof.lhat))
    dt = time.perf_counter() - t0
    ok = all_nested and worst <= 1e-8 and dt < 30
    report(3, ok, f"max |lambda - (L, lhat)| = {worst:.1e}", dt)
    assert ok


def test_criterion_04_lemma1_contraction(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    ok = True
    for i in range(100):
        m, n = (int(v) for v in rng.integers(2, 9, 2))
        A = rng.standard_normal((m, n))
        if i % 3 == 0:
            A[:, 0] = A[:, -1]
        res = lemma1_verify(A, 1.0, float(rng.uniform(1.0, 10.0)), trials=1, seed=i)
        ok &= bool(res["passed"])
        if res["rate"] > 0:
            worst = max(worst, res["worst_ratio"] / res["rate"])
    dt = time.perf_counter() - t0
    ok = ok and dt < 5
    report(4, ok, f"worst observed / bound = {worst:.6f}", dt)
    assert ok


def test_criterion_05_fig1_reproduction(report):
    t0 = time.perf_counter()
    passed, skipped, lines = 0, 0, []
    for seed in range(20):
        r = run_fig1(seed=seed)
        fast = r["nested_iters_1e-10"] is not None and r["nested_iters_1e-10"] <= 100
        slow = r["identity_gap_100"] >= 1e-6
        if r["complementary"]:
            env = r["envelope_holds"]
        else:
            env = True  # strict complementarity fails: envelope assertion skipped
            skipped += 1
        passed += fast and slow and env
        lines.append(f"seed {seed}: active {r['active_frac']:.2f} inactNF@1e-10 "
                     f"{r['nested_iters_1e-10']} identity@100 {r['identity_gap_100']:.1e} "
                     f"envelope {'skip' if not r['complementary'] else r['envelope_holds']}")
    dt = time.perf_counter() - t0
    ok = passed >= 18 and dt < 60
    print("\n".join(lines))
    report(5, ok, f"{passed}/20 seeds pass, envelope skipped on {skipped} seeds "
                  f"without strict complementarity", dt)
    assert ok


@pytest.mark.slow
def test_criterion_06_fig3_ordering(report):
    t0 = time.perf_counter()
    res = run_fig3(size=50, ns=(1, 5, 10, 20), max_iter=20000, include_chains=False)
    it = {k: _iters(v) for k, v in res["iterations"].items()}
    fam = [it[f"inactively-nested-n{n}"] for n in (1, 5, 10, 20)]
    ok = (all(a <= b for a, b in zip(fam, fam[1:])) and fam[-1] < it["nested-forest"]
          < it["identity"])
    dt = time.perf_counter() - t0
    ok = ok and dt < 300
    report(6, ok, f"active {res['active_frac']:.2f}, iterations {res['iterations']} "
                  f"(None = not reached in 20000)", dt)
    assert ok


@pytest.mark.slow
def test_criterion_07_fig2_trend(report):
    t0 = time.perf_counter()
    rows = run_fig2(ratios=(5.0,), bands=((0.3, 0.4), (0.5, 0.6), (0.7, 0.8)), seeds=range(5),
                    max_iter=10000)
    ok = True
    parts = []
    for band in ((0.3, 0.4), (0.5, 0.6), (0.7, 0.8)):
        sel = [r for r in rows if r["band"] == band]
        med = {lab: float(np.median([_iters(r[lab]) for r in sel]))
               for lab in ("inactively-nested", "nested-forest", "identity")}
        ok &= med["inactively-nested"] < med["nested-forest"]
        ok &= med["inactively-nested"] < med["identity"]
        parts.append(f"{band}: " + ", ".join(f"{k} {v:g}" for k, v in med.items()))
    dt = time.perf_counter() - t0
    ok = ok and dt < 600
    report(7, ok, "medians (inf = not reached in 10000): " + "; ".join(parts), dt)
    assert ok


def test_criterion_08_corollary_bound(report):
    t0 = time.perf_counter()
    r = run_fig1(seed=0, eps=1e-8)
    measured, bound = r["measured_to_eps"], r["corollary_bound"]
    dt = time.perf_counter() - t0
    ok = measured is not None and measured <= bound and dt < 60
    report(8, ok, f"kbar {r['kbar']}, measured {measured} <= bound {bound}", dt)
    assert ok


@pytest.mark.slow
def test_criterion_09_pdhg_deconvolution(report):
    t0 = time.perf_counter()
    res = run_fig4(dims=(32, 32), radius=3, noise_sigma=0.05, n=5, tol=1e-8)
    it = res["iterations"]
    ok = all(v is not None for v in it.values())
    ok = ok and it["inactively-nested"] < it["diagonal"] and it["inactively-nested"] < it["diagonal-pock"]
    dt = time.perf_counter() - t0
    ok = ok and dt < 300
    report(9, ok, f"iterations to relative gap 1e-8: {it}", dt)
    assert ok


def test_criterion_10_cross_algorithm_agreement(report):
    t0 = time.perf_counter()
    g = generate_grid(10, 10, 0.15)
    o = rof_oracle(np.random.default_rng(10).random(100))
    us, gaps = {}, {}
    for alg in ("pg", "fista", "pdhg"):
        res = solve(g, o, SolveConfig(algorithm=alg, tol=1e-10, gap_type="absolute",
                                      max_iter=20000))
        us[alg] = res.u
        gaps[alg] = res.trace.gaps[-1]
    diff = max(float(np.abs(us[a] - us[b]).max()) for a in us for b in us)
    dt = time.perf_counter() - t0
    ok = diff <= 1e-6 and all(v <= 1e-10 for v in gaps.values()) and dt < 60
    report(10, ok, f"max |u_a - u_b| = {diff:.1e}, final gaps "
                   + ", ".join(f"{k} {v:.1e}" for k, v in gaps.items()), dt)
    assert ok
