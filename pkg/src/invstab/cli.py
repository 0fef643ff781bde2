"""Command-line experiment runner.

Subcommands: ``simulate``, ``transport``, ``moment-map``, ``stein-check``,
``lusin``, ``verify-bounds`` and ``sweep``. Every JSON/CSV output embeds the
SHA-256 of the resolved configuration (or of the invocation settings for
the config-free subcommands) and carries no timestamps, so reruns with the
same seed are byte-identical.

Exit status: 0 when every verdict is ``holds`` or ``inconclusive`` and all
residual checks pass, 1 otherwise, 2 on configuration or usage errors.
"""

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from importlib.resources import files
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    ExperimentConfig,
    build_measure,
    build_process,
    build_scenario,
    load_config,
    parse_field,
    sweep_points,
)

log = logging.getLogger("invstab")

THREADS_ENV = "INVSTAB_THREADS"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


# ---------------------------------------------------------------- output helpers

def _plain(obj):
    """JSON-safe copy: numpy types unwrapped, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, payload, config_hash):
    body = {"config_hash": config_hash, **_plain(payload)}
    _atomic_write(path, json.dumps(body, indent=2, sort_keys=True) + "\n")


def write_csv(path, header, rows, config_hash):
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    _atomic_write(path, buf.getvalue())


def read_points_csv(path):
    """Points and weights from a CSV with header ``x_1..x_d[,weight]``."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    if not rows:
        raise ConfigError("empty point file", source=str(path))
    header = [h.strip() for h in rows[0]]
    cols = [i for i, h in enumerate(header) if h.startswith("x_")]
    expect = [f"x_{k + 1}" for k in range(len(cols))]
    if [header[i] for i in cols] != expect or not cols:
        raise ConfigError(f"header must be x_1..x_d[,weight], got {header}", source=str(path))
    extra = set(header) - set(expect) - {"weight"}
    if extra:
        raise ConfigError(f"unknown columns {sorted(extra)}", source=str(path))
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"non-numeric entry: {exc}", source=str(path)) from None
    if data.ndim != 2 or data.shape[0] == 0:
        raise ConfigError("no data rows", source=str(path))
    pts = data[:, cols]
    if "weight" in header:
        w = data[:, header.index("weight")]
    else:
        w = np.full(pts.shape[0], 1.0 / pts.shape[0])
    return pts, w


def _digest(*parts):
    h = hashlib.sha256()
    for p in parts:
        h.update(json.dumps(_plain(p), sort_keys=True).encode())
    return h.hexdigest()


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- shared plumbing

def bundled_configs():
    return sorted(p.name for p in files("invstab").joinpath("configs").iterdir() if p.name.endswith(".toml"))


def find_config(name):
    """A path, or the name of a bundled config (with or without ``.toml``)."""
    if os.path.exists(name):
        return name
    base = name if name.endswith(".toml") else name + ".toml"
    cand = files("invstab").joinpath("configs", os.path.basename(base))
    if os.path.basename(base) == base and cand.is_file():
        return str(cand)
    raise ConfigError(f"no such config file (bundled: {', '.join(bundled_configs())})", source=name)


def _threads(args):
    if getattr(args, "threads", None):
        return max(1, int(args.threads))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return 1


def _load(args, path_attr="config"):
    cfg = load_config(find_config(getattr(args, path_attr)))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _out_dir(args, cfg=None, default="out"):
    if getattr(args, "out", None):
        return Path(args.out)
    if cfg is not None:
        return Path(cfg.resolved["output"]["dir"])
    return Path(default)


def _figure(path, draw):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    draw(ax)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


# ---------------------------------------------------------------- subcommands

def cmd_simulate(args):
    from .measures import EmpiricalMeasure
    from .sde_sim import DiffusionPair, simulate, simulate_coupled
    from .transport import w2_empirical

    cfg = _load(args)
    out = _out_dir(args, cfg)
    procs = cfg.resolved["processes"]
    if "x" not in procs:
        raise ConfigError("simulate needs [processes.x]", "processes.x", source=cfg.source)
    n = cfg.resolved["numerics"]
    T, dt = cfg.value("numerics", "T"), cfg.value("numerics", "dt")
    n_traj = n["n_traj"]
    times = np.linspace(0.0, T, max(2, args.records))
    cache = {}
    x = build_process(cfg, "x", cache)
    init_x = build_measure(cfg, args.init_x)
    threads = _threads(args)
    if "y" in procs:
        y = build_process(cfg, "y", cache)
        init_y = build_measure(cfg, args.init_y)
        ens = simulate_coupled(DiffusionPair.from_halves(x, y), init_x, T, dt, n_traj, cfg.seed, record_times=times,
                               init_y=init_y, threads=threads)
    else:
        ens = simulate(x, init_x, T, dt, n_traj, cfg.seed, record_times=times, threads=threads)

    def summary(paths, target):
        fin = paths[:, -1, :]
        ref = target.draw(fin.shape[0], (cfg.seed, 900))
        return {
            "mean": fin.mean(axis=0),
            "second_moment": (fin ** 2).mean(axis=0),
            "w2_to_initial_law": w2_empirical(EmpiricalMeasure.uniform(fin), EmpiricalMeasure.uniform(ref)),
        }

    payload = {
        "command": "simulate", "seed": cfg.seed, "T": T, "dt": dt, "n_traj": ens.n_traj, "times": ens.times,
        "x": summary(ens.paths_x, init_x), "diagnostics": ens.diagnostics, "resolved_config": cfg.resolved,
    }
    if ens.paths_y is not None:
        payload["y"] = summary(ens.paths_y, init_y)
        payload["w2_x_y_final"] = w2_empirical(EmpiricalMeasure.uniform(ens.paths_x[:, -1, :]),
                                               EmpiricalMeasure.uniform(ens.paths_y[:, -1, :]))
    write_json(out / "simulate.json", payload, cfg.hash)
    if args.dump_paths:
        d = ens.paths_x.shape[2]
        header = ["traj", "t"] + [f"x_{k + 1}" for k in range(d)]
        if ens.paths_y is not None:
            header += [f"y_{k + 1}" for k in range(d)]
        rows = []
        for i in range(ens.n_traj):
            for j, t in enumerate(ens.times):
                r = [i, float(t)] + [float(v) for v in ens.paths_x[i, j]]
                if ens.paths_y is not None:
                    r += [float(v) for v in ens.paths_y[i, j]]
                rows.append(r)
        write_csv(out / "paths.csv", header, rows, cfg.hash)
    print(f"simulate: {ens.n_traj} trajectories to T={T:g}; wrote {out / 'simulate.json'}")
    return EXIT_OK


def cmd_transport(args):
    from .measures import EmpiricalMeasure
    from .transport import TransportCost, solve_ot

    pa, wa = read_points_csv(args.a)
    pb, wb = read_points_csv(args.b)
    if pa.shape[1] != pb.shape[1]:
        raise ConfigError("point clouds have different dimensions")
    kind = args.cost
    if kind in ("w2trunc", "w1trunc") and args.R is None:
        raise ConfigError(f"--cost {kind} needs --R")
    if kind == "logcost" and args.delta is None:
        raise ConfigError("--cost logcost needs --delta")
    cost = {
        "w2": TransportCost.quadratic,
        "w2trunc": lambda: TransportCost.truncated_quadratic(args.R),
        "w1trunc": lambda: TransportCost.truncated_first(args.R),
        "logcost": lambda: TransportCost.logarithmic(args.delta),
    }[kind]()
    try:
        A, B = EmpiricalMeasure(pa, wa / wa.sum()), EmpiricalMeasure(pb, wb / wb.sum())
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    plan = solve_ot(A, B, cost, method=args.method, reg=args.reg)
    settings = {"command": "transport", "cost": kind, "R": args.R, "delta": args.delta, "method": args.method,
                "reg": args.reg if args.method == "entropic" else None}
    h = _digest(settings, _file_digest(args.a), _file_digest(args.b))
    out = _out_dir(args, default="out/transport")
    payload = {"cost_value": plan.cost_value, "plan_nnz": plan.nnz, "marginal_err": plan.marginal_err,
               "n_a": A.size, "n_b": B.size, "settings": settings}
    write_json(out / "transport.json", payload, h)
    print(f"transport: {kind} cost {plan.cost_value:.6g} (nnz {plan.nnz}); wrote {out / 'transport.json'}")
    return EXIT_OK


def cmd_moment_map(args):
    from .moment_map import MomentMapError, hessian_bounds_check, monge_ampere_residual, pushforward_residual
    from .moment_map import solve_moment_map_1d

    cfg = _load(args)
    out = _out_dir(args, cfg)
    target = build_measure(cfg, args.measure)
    if target.dimension != 1:
        raise ConfigError("moment-map solves 1D targets (tensorize factors for products)", f"measures.{args.measure}")
    mm = solve_moment_map_1d(target, n_nodes=args.nodes, method=args.method)
    ma, pf = monge_ampere_residual(mm), pushforward_residual(mm)
    ok = ma < args.residual_tol and pf < args.residual_tol
    try:
        mm.validate()
        valid = None
    except MomentMapError as exc:
        valid, ok = str(exc), False
    payload = {
        "command": "moment-map", "measure": args.measure, "nodes": int(mm.grid.size),
        "monge_ampere_residual": ma, "pushforward_residual": pf, "source_mean": mm.source_mean(),
        "kernel_range": list(mm.kernel_range), "phi_second_range": [float(mm.phi_second.min()),
                                                                    float(mm.phi_second.max())],
        "residual_tol": args.residual_tol, "validation_error": valid,
        "diagnostics": {k: v for k, v in mm.diagnostics.items() if np.ndim(v) == 0},
        "resolved_config": cfg.resolved,
    }
    alpha = target.convexity_alpha
    if alpha is not None:
        hb = hessian_bounds_check(mm, alpha)
        payload["hessian_bounds"] = {"alpha": alpha, "min": hb.min_phi_second, "max": hb.max_phi_second,
                                     "passed": hb.passed}
        ok = ok and hb.passed
    payload["passed"] = ok
    rows = zip(mm.grid, mm.phi, mm.phi_prime, mm.phi_second, mm.source_cdf)
    write_csv(out / "moment_map.csv", ["x", "phi", "phi_prime", "phi_second", "G"], rows, cfg.hash)
    write_json(out / "moment_map.json", payload, cfg.hash)
    if args.figures:
        def draw(ax):
            ax.plot(mm.grid, mm.phi_second, label="phi''(x)")
            ax.set_xlabel("x")
            ax.set_ylabel("phi''")
            ax.legend()

        _figure(out / "moment_map.png", draw)
    print(f"moment-map: MA residual {ma:.3g}, pushforward residual {pf:.3g}, "
          f"{'passed' if ok else 'FAILED'}; wrote {out / 'moment_map.json'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_stein_check(args):
    from .moment_map import solve_moment_map_1d
    from .stein import constant_kernel, kernel_closed_form_1d, kernel_from_moment_map, stein_identity_residual
    from .testfunctions import battery

    cfg = _load(args)
    out = _out_dir(args, cfg)
    m = build_measure(cfg, args.measure)
    if args.kernel == "constant":
        if m.params.get("kind") != "gaussian":
            raise ConfigError("the constant kernel applies to Gaussian measures", f"measures.{args.measure}")
        k = constant_kernel(np.array(m.params["cov"]), m)
    elif m.dimension != 1:
        raise ConfigError("solved kernels are 1D only", f"measures.{args.measure}")
    elif args.kernel == "moment_map":
        k = kernel_from_moment_map(solve_moment_map_1d(m))
    else:
        k = kernel_closed_form_1d(m)
    results, ok = [], True
    for f in battery(m.dimension):
        r = stein_identity_residual(m, k, f, n=args.n, seed=cfg.seed, method=args.method)
        if args.method == "quadrature":
            good = abs(r.value) < args.quad_tol and not r.flagged
        else:
            good = abs(r.value) <= 3 * r.se and not r.flagged
        ok = ok and good
        results.append({"function": f.name, "residual": r.value, "se": r.se, "clip_fraction": r.clip_fraction,
                        "flagged": r.flagged, "passed": good})
    payload = {"command": "stein-check", "measure": args.measure, "kernel": args.kernel, "method": args.method,
               "n": args.n, "seed": cfg.seed, "results": results, "passed": ok, "resolved_config": cfg.resolved}
    write_json(out / "stein_check.json", payload, cfg.hash)
    print(f"stein-check: {sum(r['passed'] for r in results)}/{len(results)} test functions pass; "
          f"wrote {out / 'stein_check.json'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_lusin(args):
    from .lusin import estimate_lusin_witness

    pts, w = read_points_csv(args.points)
    d = pts.shape[1]
    fields = [parse_field(spec, d) for spec in args.field]
    wit = estimate_lusin_witness(pts, fields, weights=w / w.sum(), p=args.p, tol=args.tol)
    settings = {"command": "lusin", "field": list(args.field), "p": args.p, "tol": args.tol}
    h = _digest(settings, _file_digest(args.points))
    out = _out_dir(args, default="out/lusin")
    ok = bool(wit.converged and wit.kkt_residual < args.tol)
    payload = {"norm_p": wit.norm_p, "objective": wit.objective, "kkt_residual": wit.kkt_residual,
               "active_pairs": wit.active_pairs, "converged": wit.converged, "n_points": int(pts.shape[0]),
               "settings": settings, "passed": ok}
    if args.dump_g:
        write_csv(out / "lusin_g.csv", [f"x_{k + 1}" for k in range(d)] + ["g"],
                  [list(map(float, p)) + [float(g)] for p, g in zip(wit.points, wit.g_values)], h)
    write_json(out / "lusin.json", payload, h)
    print(f"lusin: ||g||_{args.p:g} = {wit.norm_p:.6g}, KKT residual {wit.kkt_residual:.3g}; "
          f"wrote {out / 'lusin.json'}")
    return EXIT_OK if ok else EXIT_FAIL


def run_scenario(cfg, threads=1):
    """Verify one (non-sweep) config; returns the JSON payload."""
    from .stability_bounds import scenario_dict, verify_scenario

    sc = build_scenario(cfg, threads=threads)
    rep = verify_scenario(sc)
    return {"scenario": cfg.resolved["scenario"]["name"], **rep.to_dict(), "settings": scenario_dict(sc),
            "resolved_config": cfg.resolved}


def cmd_verify_bounds(args):
    cfg = _load(args, "scenario")
    if args.theorem is not None:
        cfg = cfg.with_overrides(theorem=args.theorem)
    cfg = cfg.with_overrides(drop_sweep=True)
    if args.out and args.out.endswith(".json"):
        path = Path(args.out)
    else:
        path = _out_dir(args, cfg) / "report.json"
    payload = run_scenario(cfg, _threads(args))
    write_json(path, payload, cfg.hash)
    _atomic_write(path.with_suffix(".resolved.toml"), cfg.dumps())
    print(f"theorem {payload['theorem']}: lhs {payload['lhs']['value']:.6g} +- {payload['lhs']['se']:.2g}, "
          f"rhs {payload['rhs']:.6g}, slack {payload['slack']:.6g} -> {payload['verdict']}; wrote {path}")
    return EXIT_FAIL if payload["verdict"] == "violated" else EXIT_OK


def point_seed(seed, index):
    """Independent seed for sweep point ``index``."""
    return int(np.random.SeedSequence([int(seed), 7919, int(index)]).generate_state(1)[0] & 0x7FFFFFFF)


def _sweep_worker(job):
    resolved, source, out_dir, threads = job
    cfg = ExperimentConfig(resolved, source)
    payload = run_scenario(cfg, threads)
    write_json(Path(out_dir) / "report.json", payload, cfg.hash)
    _atomic_write(Path(out_dir) / "resolved.toml", cfg.dumps())
    return payload


def cmd_sweep(args):
    cfg = _load(args)
    sw = cfg.resolved.get("sweep")
    if sw is None:
        raise ConfigError("config has no [sweep] table", "sweep", source=cfg.source)
    out = _out_dir(args, cfg)
    jobs, labels = [], []
    for i, (v, pc) in enumerate(sweep_points(cfg)):
        pc = pc.with_overrides(seed=point_seed(cfg.seed, i))
        label = f"{sw['param']}={v:g}"
        labels.append((v, label))
        jobs.append((pc.resolved, pc.source, str(out / label), 1))
    workers = max(1, min(args.workers or _threads(args), len(jobs)))
    if workers == 1:
        payloads = [_sweep_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            payloads = list(ex.map(_sweep_worker, jobs))
    rows = [(v, p["inputs"]["beta"], p["lhs"]["value"], p["lhs"]["se"], p["rhs"], p["slack"], p["verdict"])
            for (v, _), p in zip(labels, payloads)]
    write_csv(out / "sweep.csv", [sw["param"], "beta", "lhs", "lhs_se", "rhs", "slack", "verdict"], rows, cfg.hash)
    summary = {"command": "sweep", "param": sw["param"],
               "points": [{"value": v, "dir": lab, "verdict": p["verdict"], "slack": p["slack"],
                           "config_hash": ExperimentConfig(j[0]).hash}
                          for (v, lab), p, j in zip(labels, payloads, jobs)],
               "resolved_config": cfg.resolved}
    write_json(out / "sweep.json", summary, cfg.hash)
    _atomic_write(out / "resolved.toml", cfg.dumps())
    if args.figures:
        def draw(ax):
            xs = [r[0] for r in rows]
            ax.errorbar(xs, [r[2] for r in rows], yerr=[3 * r[3] for r in rows], fmt="o-", label="LHS (3 SE)")
            ax.plot(xs, [r[4] for r in rows], "s--", label="RHS")
            ax.set_xlabel(sw["param"])
            ax.set_yscale("log")
            ax.legend()

        _figure(out / "sweep.png", draw)
    for r in rows:
        print(f"{sw['param']}={r[0]:g}: lhs {r[2]:.6g} +- {r[3]:.2g}, rhs {r[4]:.6g} -> {r[6]}")
    print(f"sweep: wrote {out / 'sweep.csv'}")
    return EXIT_FAIL if any(r[6] == "violated" for r in rows) else EXIT_OK


# ---------------------------------------------------------------- argument parsing

def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the configured seed")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help=f"worker threads (default: ${THREADS_ENV} or 1)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (or report path)")
    common.add_argument("--figures", action="store_true", default=argparse.SUPPRESS,
                        help="also render PNG figures next to the CSV data (needs matplotlib)")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="invstab", description=__doc__.split("\n")[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate the configured process(es)")
    s.add_argument("config")
    s.add_argument("--dump-paths", action="store_true", help="write paths.csv (traj, t, x_*, y_*)")
    s.add_argument("--records", type=int, default=11, help="number of recorded times")
    s.add_argument("--init-x", default="mu", help="measure for X_0")
    s.add_argument("--init-y", default="nu", help="measure for Y_0")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("transport", parents=[common], help="optimal transport cost between two point clouds")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--cost", choices=["w2", "w2trunc", "w1trunc", "logcost"], default="w2")
    s.add_argument("--R", type=float)
    s.add_argument("--delta", type=float)
    s.add_argument("--method", choices=["exact", "entropic"], default="exact")
    s.add_argument("--reg", type=float, default=1e-2)
    s.set_defaults(func=cmd_transport)

    s = sub.add_parser("moment-map", parents=[common], help="solve the 1D moment map of a configured measure")
    s.add_argument("config")
    s.add_argument("--measure", default="mu")
    s.add_argument("--nodes", type=int, default=4097)
    s.add_argument("--method", choices=["auto", "shooting", "fixed_point"], default="auto")
    s.add_argument("--residual-tol", type=float, default=1e-6)
    s.set_defaults(func=cmd_moment_map)

    s = sub.add_parser("stein-check", parents=[common], help="Stein identity residuals over a test battery")
    s.add_argument("config")
    s.add_argument("--measure", default="mu")
    s.add_argument("--kernel", choices=["moment_map", "closed_form", "constant"], default="moment_map")
    s.add_argument("--method", choices=["mc", "quadrature"], default="mc")
    s.add_argument("--n", type=int, default=100_000)
    s.add_argument("--quad-tol", type=float, default=1e-6)
    s.set_defaults(func=cmd_stein_check)

    s = sub.add_parser("lusin", parents=[common], help="empirical Lusin-Lipschitz witness")
    s.add_argument("points", help="CSV with header x_1..x_d[,weight]")
    s.add_argument("--field", action="append", required=True,
                   help="comma-separated component expressions in x1..xd (repeatable)")
    s.add_argument("--p", type=float, default=2.0)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--dump-g", action="store_true", help="write the witness values to lusin_g.csv")
    s.set_defaults(func=cmd_lusin)

    s = sub.add_parser("verify-bounds", parents=[common], help="check one stability bound on a scenario")
    s.add_argument("--scenario", required=True, help="config path or bundled config name")
    s.add_argument("--theorem", type=int, choices=[1, 2, 3])
    s.set_defaults(func=cmd_verify_bounds)

    s = sub.add_parser("sweep", parents=[common], help="run a configured parameter sweep in parallel")
    s.add_argument("config")
    s.add_argument("--workers", type=int, help="parallel scenarios (default: thread count)")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    for k, v in (("seed", None), ("threads", None), ("out", None), ("figures", False), ("verbose", 0)):
        if not hasattr(args, k):
            setattr(args, k, v)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invstab: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
