"""Command line runner: ``graphtv run|partition|analyze|bench``.

Configuration is a flat ``key = value`` text file (``#`` starts a comment);
``--set key=value`` overrides entries. Exit codes: 0 ok, 1 not converged,
2 bad input.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .analysis import active_set, inactive_projector, local_rate
from .forests import (ForestDecomposition, fixed_nested_forest, greedy_inactively_nested,
                      grid_chain_decomposition, nesting_profile, validate)
from .graph import GraphError, WeightedGraph, load_benchmark
from .problems import rof_oracle
from .solvers import SolveConfig, solve

log = logging.getLogger("graphtv")

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_BAD_INPUT = 0, 1, 2
PRESETS = ("fig1-grid", "fig2-random", "fig3-grid", "fig4-deconv", "table1-benchmark", "custom")
SOLVER_KEYS = ("algorithm", "precond", "recondition", "t", "s", "balance", "tol", "gap_type",
               "max_iter", "eps_active", "track_nesting", "seed")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration


def parse_config(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; later keys win."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        out[key] = value
    return out


def load_config(path, overrides=()) -> dict[str, str]:
    cfg = parse_config(Path(path).read_text()) if path else {}
    cfg.update(parse_config("\n".join(overrides)))
    return cfg


def _num(value: str):
    low = value.lower()
    if low in ("none", "inf", "once"):
        return None
    if low in ("true", "yes"):
        return True
    if low in ("false", "no"):
        return False
    try:
        return int(value)
    except ValueError:
        return float(value)


def _floats(value: str) -> tuple[float, ...]:
    return tuple(float(v) for v in value.replace(",", " ").split())


def _bands(value: str) -> tuple[tuple[float, float], ...]:
    vals = _floats(value.replace(":", " "))
    if len(vals) % 2:
        raise ConfigError("bands need pairs lo:hi")
    return tuple(zip(vals[0::2], vals[1::2]))


def solve_config(cfg: dict, **defaults) -> SolveConfig:
    kw = dict(defaults)
    for key in SOLVER_KEYS:
        if key in cfg:
            kw[key] = cfg[key] if key in ("algorithm", "precond", "gap_type") else _num(cfg[key])
    return SolveConfig(**kw)


def _path(cfg, key, required=True):
    if key not in cfg:
        if required:
            raise ConfigError(f"missing config key {key!r}")
        return None
    p = Path(cfg[key])
    if not p.exists():
        raise ConfigError(f"{key}: file {p} does not exist")
    return p


def _load_vector(path, n, what) -> np.ndarray:
    v = np.loadtxt(path, dtype=np.float64, ndmin=1)
    if v.shape != (n,):
        raise ConfigError(f"{what}: expected {n} values, found {v.size}")
    return v


def _load_dual(cfg, g) -> np.ndarray:
    src = cfg.get("p", "zero")
    if src == "zero":
        return np.zeros(g.n_edges)
    return _load_vector(_path(cfg, "p"), g.n_edges, "p")


def _load_graph(cfg) -> tuple[WeightedGraph, np.ndarray]:
    g, f = load_benchmark(_path(cfg, "graph"))
    if "data" in cfg:
        f = _load_vector(_path(cfg, "data"), g.n_vertices, "data")
    if "lambda" in cfg:
        g = g.scaled(float(cfg["lambda"]))
    return g, f


def _write_summary(out: Path, items: dict) -> None:
    lines = [f"{k} = {'--' if v is None else v}" for k, v in items.items()]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


def _record_summary(records, prefix="") -> dict:
    items = {}
    for r in records:
        items[f"{prefix}{r.label}.iterations_to_tol"] = r.iterations
        items[f"{prefix}{r.label}.time_to_tol"] = None if r.time_s is None else f"{r.time_s:.4f}"
        items[f"{prefix}{r.label}.final_gap"] = repr(r.final_gap)
    return items


# --------------------------------------------------------------------------
# commands


def cmd_run(cfg: dict, out: Path) -> int:
    preset = cfg.get("preset", "custom")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    seed = int(cfg.get("seed", 0))
    if preset == "fig1-grid":
        res = ex.run_fig1(seed=seed, out_dir=out, iters=int(cfg.get("max_iter", 100)))
        items = {k: v for k, v in res.items() if k != "envelope"}
        _write_summary(out, items)
        return EXIT_OK if res["nested_iters_1e-10"] is not None else EXIT_NOT_CONVERGED
    if preset == "fig2-random":
        rows = ex.run_fig2(ratios=_floats(cfg.get("ratios", "5")),
                           bands=_bands(cfg.get("bands", "0.3:0.4 0.5:0.6 0.7:0.8")),
                           seeds=range(int(cfg.get("n_seeds", 5))),
                           n_vertices=int(cfg.get("n_vertices", 512)),
                           max_iter=int(cfg.get("max_iter", 10000)), out_dir=out)
        labels = ("inactively-nested", "nested-forest", "identity")
        lines = ["ratio,band_lo,band_hi,seed,lambda,active_frac," + ",".join(labels)]
        for r in rows:
            its = ["" if r[lab] is None else str(r[lab]) for lab in labels]
            lines.append(f"{r['ratio']},{r['band'][0]},{r['band'][1]},{r['seed']},{r['lambda']!r},"
                         f"{r['active_frac']!r}," + ",".join(its))
        (out / "fig2_summary.csv").write_text("\n".join(lines) + "\n")
        print("\n".join(lines))
        done = all(r["inactively-nested"] is not None for r in rows)
        return EXIT_OK if done else EXIT_NOT_CONVERGED
    if preset == "fig3-grid":
        ns = tuple(int(v) for v in _floats(cfg.get("ns", "1 5 10 20")))
        band = _bands(cfg.get("band", "0.25:0.35"))[0]
        res = ex.run_fig3(size=int(cfg.get("size", 50)), ns=ns, seed=seed, band=band,
                          max_iter=int(cfg.get("max_iter", 50000)), out_dir=out)
        items = {"lambda": res["lambda"], "active_frac": res["active_frac"]}
        items.update(_record_summary(res["records"]))
        _write_summary(out, items)
        return EXIT_OK if all(r.iterations is not None for r in res["records"][:len(ns)]) \
            else EXIT_NOT_CONVERGED
    if preset == "fig4-deconv":
        res = ex.run_fig4(dims=(int(cfg.get("height", 32)), int(cfg.get("width", 32))), seed=seed,
                          noise_sigma=float(cfg.get("noise_sigma", 0.05)),
                          radius=int(cfg.get("radius", 3)), lam=float(cfg.get("lambda", 0.02)),
                          n=int(cfg.get("recondition", 5)), tol=float(cfg.get("tol", 1e-8)),
                          max_iter=int(cfg.get("max_iter", 20000)), out_dir=out)
        items = _record_summary(res["records"])
        items["cg_failures"] = res["cg_failures"]
        _write_summary(out, items)
        return EXIT_OK if all(r.iterations is not None for r in res["records"]) \
            else EXIT_NOT_CONVERGED
    if preset == "table1-benchmark":
        return cmd_bench(cfg, out)
    g, f = _load_graph(cfg)
    config = solve_config(cfg)
    res = solve(g, rof_oracle(f), config)
    res.trace.to_csv(out / "trace.csv")
    np.savetxt(out / "u.txt", res.u, fmt="%.17g")
    np.savetxt(out / "p.txt", res.p, fmt="%.17g")
    k = res.trace.iterations_to_tol(config.tol, config.gap_type)
    _write_summary(out, {"iterations_to_tol": k,
                         "time_to_tol": res.trace.time_to_tol(config.tol, config.gap_type),
                         "final_gap": repr(float(res.trace.gaps[-1])),
                         "active_frac": res.trace.rows[-1]["active_frac"]})
    if k is None:
        print(f"not converged to {config.gap_type} gap {config.tol:g} within "
              f"{config.max_iter} iterations", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _decompose(g, method, p) -> ForestDecomposition:
    if method == "inactively-nested":
        return greedy_inactively_nested(g, p)
    if method == "nested-forest":
        return fixed_nested_forest(g)
    if method == "chains":
        return grid_chain_decomposition(g)
    raise ConfigError(f"unknown partition method {method!r}")


def _nesting_lines(d, g, p, eps_active) -> dict:
    inactive = active_set(p, eps_active).inactive
    prof = nesting_profile(d, g, inactive)
    return {"L": prof.L, "lhat": prof.lhat, "L_eff": prof.L_eff, "span_dims": list(prof.dims),
            "chain": prof.chain, "nested": prof.nested,
            "forest_sizes": [len(es) for es in d.forests]}


def cmd_partition(cfg: dict, out: Path) -> int:
    g, _ = _load_graph(cfg)
    p = _load_dual(cfg, g)
    d = _decompose(g, cfg.get("method", "inactively-nested"), p)
    d.save(out / "decomposition.txt")
    _write_summary(out, _nesting_lines(d, g, p, float(cfg.get("eps_active", 1e-7))))
    return EXIT_OK


def _tail_slope(values, floor) -> float | None:
    """Least-squares slope of ``log values`` over the entries above ``floor``."""
    v = np.asarray(values)
    keep = np.flatnonzero(v > floor)
    if keep.size < 3:
        return None
    return float(np.polyfit(keep, np.log(v[keep]), 1)[0])


def cmd_analyze(cfg: dict, out: Path) -> int:
    if cfg.get("preset") == "fig1-grid":
        g, oracle, lam, frac = ex.fig1_instance(int(cfg.get("seed", 0)))
        env = ex.envelope_experiment(g, oracle)
        items = {"lambda": lam, "active_frac": frac, "kbar": env.kbar, "L": env.L,
                 "L_eff": env.L_eff, "lhat": env.lhat, "phi": env.phi,
                 "phi_dense": env.phi_dense, "contraction": env.contraction,
                 "envelope_log_slope": math.log(env.contraction) if env.contraction > 0 else None,
                 "empirical_log_slope": _tail_slope(env.dist_T, 1e-11),
                 "envelope_holds": env.holds, "strict_complementarity": env.complementary}
        np.savetxt(out / "envelope.csv", np.column_stack([env.dist_T, env.envelope]),
                   delimiter=",", header="dist_T,envelope", comments="", fmt="%.17g")
        _write_summary(out, items)
        return EXIT_OK
    g, _ = _load_graph(cfg)
    p = _load_dual(cfg, g)
    eps = float(cfg.get("eps_active", 1e-7))
    if "decomposition" in cfg:
        d = ForestDecomposition.from_text(g.n_vertices, _path(cfg, "decomposition").read_text())
        problems = validate(d, g)
        if problems:
            raise ConfigError("invalid decomposition: " + "; ".join(problems))
    else:
        d = _decompose(g, cfg.get("method", "inactively-nested"), p)
    items = _nesting_lines(d, g, p, eps)
    inactive = active_set(p, eps).inactive
    rep = inactive_projector(g, d, inactive)
    items.update({"lambda_max": rep.lambda_max, "lambda_min_pos": rep.lambda_min_pos,
                  "projector_mismatch": rep.mismatch})
    if items["lhat"] is not None and items["L_eff"] >= items["lhat"]:
        rate = local_rate(items["L_eff"], items["lhat"])
        items.update({"phi": rate.phi, "contraction": rate.contraction})
    _write_summary(out, items)
    return EXIT_OK


def cmd_bench(cfg: dict, out: Path) -> int:
    src = cfg.get("bench_dir", "synthetic")
    if src == "synthetic":
        bench_dir = out / "instances"
        ex.make_benchmark_dir(bench_dir, seed=int(cfg.get("seed", 0)))
    else:
        bench_dir = Path(src)
        if not bench_dir.is_dir():
            raise ConfigError(f"bench_dir {bench_dir} is not a directory")
    rows = ex.run_bench(bench_dir, tol=float(cfg.get("tol", 1e-10)),
                        max_iter=int(cfg.get("max_iter", 20000)),
                        algorithm=cfg.get("algorithm", "fista"),
                        recondition=int(cfg.get("recondition", 30)), out_dir=out)
    if not rows:
        raise ConfigError(f"no benchmark files in {bench_dir}")
    table = ex.format_bench(rows)
    (out / "bench.tsv").write_text(table)
    print(table, end="")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "partition": cmd_partition, "analyze": cmd_analyze,
            "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="graphtv", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="key=value configuration file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a configuration entry (repeatable)")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, GraphError, OSError, ValueError) as exc:
        print(f"graphtv: error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
