import numpy as np

from graphtv.experiments import bisect_lambda, format_bench, make_benchmark_dir, solution_active_fraction
from graphtv.graph import generate_grid, load_benchmark
from graphtv.problems import rof_oracle


def test_bisection_hits_band():
    g = generate_grid(6, 6)
    f = np.random.default_rng(0).random(36)
    lam, frac = bisect_lambda(g, f, (0.3, 0.5))
    assert 0.3 <= frac <= 0.5
    again, _ = solution_active_fraction(g.scaled(lam), rof_oracle(f))
    assert again == frac


def test_active_fraction_falls_with_scale():
    g = generate_grid(6, 6)
    f = np.random.default_rng(1).random(36)
    fr = [solution_active_fraction(g.scaled(s), rof_oracle(f))[0] for s in (0.01, 0.1, 1.0)]
    assert fr[0] >= fr[1] >= fr[2]


def test_benchmark_dir_is_deterministic(tmp_path):
    a = make_benchmark_dir(tmp_path / "a", seed=2)
    b = make_benchmark_dir(tmp_path / "b", seed=2)
    assert [p.read_text() for p in a] == [p.read_text() for p in b]
    g, f = load_benchmark(a[0])
    assert g.grid_shape is not None and f.size == g.n_vertices


def test_format_bench_markers():
    rows = [{"name": "x*", "active_frac": 0.5, "none": (None, None), "chains": (3, 0.1)},
            {"name": "y", "active_frac": 0.4, "none": (7, 0.2)}]
    out = format_bench(rows).splitlines()
    assert out[1].split("\t")[2] == "--"
    assert out[2].split("\t")[3] == "n/a"
