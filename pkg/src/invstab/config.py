"""Experiment configuration: TOML parsing, validation and object construction.

A config declares measures, the two processes, numeric settings and the
bound being checked. Numeric fields may be given as expressions in the
names of ``[params]`` (so one file can describe a sweep). Every config is
resolved to a plain dict with all defaults filled in; the SHA-256 of its
canonical JSON form is stamped into every output file.
"""

import copy
import hashlib
import json
import math
import re
import sys
from dataclasses import dataclass

import numpy as np
import sympy

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .measures import InvalidMeasureError, make_gaussian, make_gibbs_1d, make_point_mass
from .sde_sim import Diffusion, DiffusionPair, constant_field, ou_process
from .stability_bounds import Scenario

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "resolve",
    "config_hash",
    "build_measure",
    "build_process",
    "build_scenario",
    "sweep_points",
    "parse_field",
]


class ConfigError(ValueError):
    """Schema violation, with the offending field and (when known) line."""

    def __init__(self, message, field=None, line=None, source=None):
        self.message, self.field, self.line, self.source = message, field, line, source
        where = ""
        if source:
            where += f"{source}:"
        if line:
            where += f"{line}:"
        if field:
            where += f" {field}:" if where else f"{field}:"
        super().__init__(f"{where} {message}".strip())


# allowed keys and defaults per section
_SCENARIO_KEYS = {"name", "theorem", "seed", "description"}
_NUMERIC_KEYS = {
    "T": 1.0, "dt": 1e-3, "n_samples": 2000, "batches": 10, "n_traj": 2000,
    "discrepancy_n": 100_000, "lusin_points": 500,
}
_BOUND_KEYS = {
    "R": None, "delta": None, "p": "inf", "L": None, "kappa_source": "analytic", "kappa": None, "C_H": None,
    "g_source": "lusin", "g_norm": None, "alpha": None, "variant": "general", "C": 1.0, "truncation_C": 100.0,
}
_MEASURE_KEYS = {
    "gaussian": {"kind", "mean", "cov"},
    "gibbs1d": {"kind", "V", "alpha"},
    "point": {"kind", "location"},
}
_PROCESS_KEYS = {
    "ou": {"kind", "dim", "variance"},
    "expr": {"kind", "drift", "sqrt_diffusion"},
    "stein": {"kind", "measure", "kernel"},
}
_TOP = {"scenario", "params", "sweep", "measures", "processes", "numerics", "bounds", "output"}
_INT_FIELDS = {"n_samples", "batches", "n_traj", "discrepancy_n", "lusin_points"}


def _key_lines(text):
    """Map dotted key paths to 1-based line numbers (headers and ``key =`` lines)."""
    lines, table = {}, ()
    header = re.compile(r"^\s*\[\s*([^\[\]]+?)\s*\]\s*(#.*)?$")
    assign = re.compile(r"^\s*([A-Za-z0-9_\-\"'.]+)\s*=")
    for i, raw in enumerate(text.splitlines(), 1):
        m = header.match(raw)
        if m:
            table = tuple(p.strip().strip('"\'') for p in m.group(1).split("."))
            lines.setdefault(table, i)
            continue
        m = assign.match(raw)
        if m:
            key = tuple(p.strip().strip('"\'') for p in m.group(1).split("."))
            lines.setdefault(table + key, i)
    return lines


@dataclass
class ExperimentConfig:
    """A validated, fully defaulted configuration."""

    resolved: dict
    source: str = "<config>"

    @property
    def hash(self):
        return config_hash(self.resolved)

    @property
    def theorem(self):
        return self.resolved["scenario"]["theorem"]

    @property
    def seed(self):
        return self.resolved["scenario"]["seed"]

    @property
    def params(self):
        return self.resolved["params"]

    def value(self, section, key):
        """Numeric value of ``[section].key`` with parameters substituted."""
        v = self.resolved[section][key]
        return None if v is None else _number(v, self.params, f"{section}.{key}")

    def with_overrides(self, seed=None, theorem=None, params=None, drop_sweep=False):
        r = copy.deepcopy(self.resolved)
        if seed is not None:
            r["scenario"]["seed"] = int(seed)
        if theorem is not None:
            r["scenario"]["theorem"] = int(theorem)
        if params:
            r["params"].update({k: float(v) for k, v in params.items()})
        if drop_sweep:
            r.pop("sweep", None)
        return ExperimentConfig(_validate(r, {}, self.source), self.source)

    def dumps(self):
        import tomli_w

        return tomli_w.dumps(_tomlable(self.resolved))


def _tomlable(obj):
    # TOML has no null: unset optional fields are dropped (they resolve back to the same default)
    if isinstance(obj, dict):
        return {k: _tomlable(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, list):
        return [_tomlable(v) for v in obj]
    return obj


def config_hash(resolved):
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"), allow_nan=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _number(v, params, field):
    """Evaluate a number or an expression in the parameters."""
    if isinstance(v, bool):
        raise ConfigError("expected a number, got a boolean", field)
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        if v.strip().lower() in ("inf", "+inf", "infinity"):
            return math.inf
        try:
            e = sympy.sympify(v, locals={k: sympy.Symbol(k) for k in params})
            val = e.subs({sympy.Symbol(k): p for k, p in params.items()})
            return float(val)
        except (sympy.SympifyError, TypeError, ValueError) as exc:
            raise ConfigError(f"cannot evaluate {v!r} with parameters {sorted(params)}: {exc}", field) from None
    raise ConfigError(f"expected a number or expression, got {type(v).__name__}", field)


def load_config(path):
    path = str(path)
    with open(path, "rb") as fh:
        text = fh.read().decode()
    return parse_config(text, source=path)


def parse_config(text, source="<config>"):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}", source=source) from None
    return ExperimentConfig(_validate(raw, _key_lines(text), source), source)


def resolve(raw, source="<config>"):
    return _validate(copy.deepcopy(raw), {}, source)


def _validate(raw, lines, source):
    def err(msg, *path):
        key = tuple(path)
        line = None
        while key and line is None:
            line = lines.get(key)
            key = key[:-1]
        raise ConfigError(msg, ".".join(path) if path else None, line, source)

    def only(table, allowed, *path):
        if not isinstance(table, dict):
            err("expected a table", *path)
        for k in table:
            if k not in allowed:
                err(f"unknown key (allowed: {', '.join(sorted(allowed))})", *path, k)

    only(raw, _TOP)
    out = {}

    sc = raw.get("scenario", {})
    only(sc, _SCENARIO_KEYS, "scenario")
    theorem = sc.get("theorem")
    if theorem is not None and theorem not in (1, 2, 3):
        err("theorem must be 1, 2 or 3", "scenario", "theorem")
    seed = sc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        err("seed must be a non-negative integer", "scenario", "seed")
    out["scenario"] = {"name": str(sc.get("name", "scenario")), "theorem": theorem, "seed": seed,
                       "description": str(sc.get("description", ""))}

    params = raw.get("params", {})
    if not isinstance(params, dict):
        err("expected a table", "params")
    for k, v in params.items():
        if not re.fullmatch(r"[A-Za-z_]\w*", k) or k in ("x", "pi", "E") or re.fullmatch(r"x\d+", k):
            err("parameter names must be identifiers other than x, x1, x2, ..., pi, E", "params", k)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            err("parameters must be numbers", "params", k)
    out["params"] = {k: float(v) for k, v in params.items()}

    if "sweep" in raw:
        sw = raw["sweep"]
        only(sw, {"param", "values"}, "sweep")
        if sw.get("param") not in out["params"]:
            err("sweep.param must name an entry of [params]", "sweep", "param")
        vals = sw.get("values")
        if not isinstance(vals, list) or not vals or not all(isinstance(v, (int, float)) for v in vals):
            err("sweep.values must be a non-empty list of numbers", "sweep", "values")
        out["sweep"] = {"param": sw["param"], "values": [float(v) for v in vals]}

    measures = raw.get("measures", {})
    only(measures, set(measures), "measures")
    out["measures"] = {}
    for name, m in measures.items():
        if not isinstance(m, dict):
            err("expected a table", "measures", name)
        kind = m.get("kind")
        if kind not in _MEASURE_KEYS:
            err(f"kind must be one of {sorted(_MEASURE_KEYS)}", "measures", name, "kind")
        only(m, _MEASURE_KEYS[kind], "measures", name)
        r = dict(m)
        if kind == "gaussian":
            r.setdefault("mean", 0.0)
            r.setdefault("cov", 1.0)
        elif kind == "gibbs1d":
            if not isinstance(m.get("V"), str):
                err("gibbs1d needs V, an expression in x", "measures", name, "V")
            r.setdefault("alpha", None)
        else:
            r.setdefault("location", 0.0)
        out["measures"][name] = r

    procs = raw.get("processes", {})
    only(procs, {"x", "y"}, "processes")
    out["processes"] = {}
    for name, p in procs.items():
        if not isinstance(p, dict):
            err("expected a table", "processes", name)
        kind = p.get("kind")
        if kind not in _PROCESS_KEYS:
            err(f"kind must be one of {sorted(_PROCESS_KEYS)}", "processes", name, "kind")
        only(p, _PROCESS_KEYS[kind], "processes", name)
        r = dict(p)
        if kind == "ou":
            r.setdefault("dim", 1)
            r.setdefault("variance", 1.0)
        elif kind == "expr":
            if not isinstance(p.get("drift"), list) or not all(isinstance(s, str) for s in p["drift"]):
                err("drift must be a list of expressions, one per coordinate", "processes", name, "drift")
            r.setdefault("sqrt_diffusion", "1")
        else:
            if p.get("measure") not in out["measures"]:
                err("measure must name an entry of [measures]", "processes", name, "measure")
            r.setdefault("kernel", "moment_map")
            if r["kernel"] not in ("moment_map", "closed_form", "constant"):
                err("kernel must be moment_map, closed_form or constant", "processes", name, "kernel")
        out["processes"][name] = r

    num = raw.get("numerics", {})
    only(num, set(_NUMERIC_KEYS), "numerics")
    out["numerics"] = {k: num.get(k, d) for k, d in _NUMERIC_KEYS.items()}
    for k in _INT_FIELDS:
        v = out["numerics"][k]
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            err("must be a positive integer", "numerics", k)

    bd = raw.get("bounds", {})
    only(bd, set(_BOUND_KEYS), "bounds")
    out["bounds"] = {k: bd.get(k, d) for k, d in _BOUND_KEYS.items()}
    for k in ("kappa_source", "g_source", "variant"):
        if not isinstance(out["bounds"][k], str):
            err("must be a string", "bounds", k)
    if out["bounds"]["kappa_source"] not in ("analytic", "stein", "fitted"):
        err("must be analytic, stein or fitted", "bounds", "kappa_source")
    if out["bounds"]["g_source"] not in ("lusin", "analytic"):
        err("must be lusin or analytic", "bounds", "g_source")
    if out["bounds"]["variant"] not in ("general", "radial", "lipschitz"):
        err("must be general, radial or lipschitz", "bounds", "variant")

    outp = raw.get("output", {})
    only(outp, {"dir"}, "output")
    out["output"] = {"dir": str(outp.get("dir", "out"))}

    # numeric fields must evaluate under every parameter set the config will run with
    param_sets = [out["params"]]
    if "sweep" in out:
        param_sets = [{**out["params"], out["sweep"]["param"]: v} for v in out["sweep"]["values"]]
    for ps in param_sets:
        for sec in ("numerics", "bounds"):
            for k, v in out[sec].items():
                if v is None or (sec == "bounds" and k in ("kappa_source", "g_source", "variant")):
                    continue
                try:
                    _number(v, ps, f"{sec}.{k}")
                except ConfigError as exc:
                    err(exc.message, sec, k)
        _check_preconditions(out, ps, err)
    return out


def _check_preconditions(out, params, err):
    th = out["scenario"]["theorem"]
    b = out["bounds"]

    def val(k):
        v = b[k]
        return None if v is None else _number(v, params, f"bounds.{k}")

    n = out["numerics"]
    if not _number(n["T"], params, "numerics.T") > 0 or not _number(n["dt"], params, "numerics.dt") > 0:
        err("T and dt must be positive", "numerics")
    if th is None:
        return
    if th == 1:
        R = val("R")
        if R is None:
            err("theorem 1 needs R; its bound is stated 'for any R > 1'", "bounds", "R")
        if not R > 1:
            err(f"R = {R:g} violates the theorem 1 precondition 'for any R > 1'", "bounds", "R")
        p = val("p")
        if not p >= 1:
            err("p must be >= 1 (or inf)", "bounds", "p")
    if th == 2 and val("L") is None:
        err("theorem 2 needs the Lipschitz constant L", "bounds", "L")
    if th == 3 and b["variant"] == "lipschitz" and val("L") is None:
        err("the lipschitz variant needs L", "bounds", "L")
    if b["kappa_source"] == "analytic" and th in (1, 2) and (val("kappa") is None or val("C_H") is None):
        err("kappa_source = 'analytic' needs kappa and C_H", "bounds", "kappa_source")
    if b["g_source"] == "analytic" and th == 1 and val("g_norm") is None:
        err("g_source = 'analytic' needs g_norm", "bounds", "g_source")
    if {"x", "y"} - set(out["processes"]):
        err(f"theorem {th} needs both [processes.x] and [processes.y]", "processes")
    if {"mu", "nu"} - set(out["measures"]):
        err(f"theorem {th} needs [measures.mu] and [measures.nu]", "measures")


def sweep_points(cfg):
    """Per-point configs of a sweep (a single point when there is no sweep)."""
    sw = cfg.resolved.get("sweep")
    if sw is None:
        return [(None, cfg)]
    return [(v, cfg.with_overrides(params={sw["param"]: v}, drop_sweep=True)) for v in sw["values"]]


# ---------------------------------------------------------------- construction

def _symbols(d):
    xs = sympy.symbols(" ".join(f"x{i + 1}" for i in range(d)), seq=True)
    return list(xs)


def _sym(expr, d, params, field):
    loc = {f"x{i + 1}": s for i, s in enumerate(_symbols(d))}
    if d == 1:
        loc["x"] = loc["x1"]
    loc.update({k: sympy.Symbol(k) for k in params})
    try:
        e = sympy.sympify(expr, locals=loc)
    except (sympy.SympifyError, TypeError) as exc:
        raise ConfigError(f"cannot parse {expr!r}: {exc}", field) from None
    e = e.subs({sympy.Symbol(k): v for k, v in params.items()})
    allowed = set(_symbols(d))
    extra = e.free_symbols - allowed
    if extra:
        raise ConfigError(f"unknown symbols {sorted(map(str, extra))} in {expr!r}", field)
    return e


def _lambdify(e, d):
    f = sympy.lambdify(_symbols(d), e, modules="numpy")

    def call(x):
        x = np.asarray(x, dtype=float).reshape(-1, d)
        return np.broadcast_to(np.asarray(f(*x.T), dtype=float), (x.shape[0],))

    return call


def _vector_field(exprs, d, params, field):
    comps = [_lambdify(_sym(s, d, params, field), d) for s in exprs]

    def F(x):
        x = np.asarray(x, dtype=float).reshape(-1, d)
        return np.column_stack([c(x) for c in comps])

    return F


def parse_field(spec, d, params=None):
    """Field from comma-separated component expressions in ``x1..xd``."""
    return _vector_field([s for s in spec.split(",")], d, params or {}, "field")


def _array(v, params, field):
    if isinstance(v, list):
        return np.array([_array(e, params, field) for e in v], dtype=float)
    return np.asarray(_number(v, params, field))


def build_measure(cfg, name):
    if name not in cfg.resolved["measures"]:
        raise ConfigError(f"no measure named {name!r}", f"measures.{name}")
    m = cfg.resolved["measures"][name]
    params, field = cfg.params, f"measures.{name}"
    try:
        if m["kind"] == "gaussian":
            mean = np.atleast_1d(_array(m["mean"], params, field + ".mean"))
            cov = _array(m["cov"], params, field + ".cov")
            if cov.ndim == 1:
                cov = np.diag(cov)
            d = max(mean.size, cov.shape[0] if cov.ndim == 2 else 1)
            if mean.size == 1:
                mean = np.full(d, float(mean[0]))
            if cov.ndim == 0:
                cov = float(cov) * np.eye(d)
            return make_gaussian(mean, cov, name=name)
        if m["kind"] == "gibbs1d":
            e = _sym(m["V"], 1, params, field + ".V")
            x = _symbols(1)[0]
            funcs = [_lambdify(sympy.diff(e, x, k), 1) for k in range(3)]
            wrap = [lambda t, f=f: f(np.asarray(t, dtype=float)).reshape(np.shape(t)) for f in funcs]
            alpha = m.get("alpha")
            alpha = None if alpha is None else _number(alpha, params, field + ".alpha")
            return make_gibbs_1d(*wrap, alpha=alpha, name=name)
        return make_point_mass(np.atleast_1d(_array(m["location"], params, field + ".location")), name=name)
    except InvalidMeasureError as exc:
        raise ConfigError(str(exc), field) from None
    except np.linalg.LinAlgError as exc:
        raise ConfigError(f"invalid covariance: {exc}", field) from None


def build_process(cfg, name, cache=None):
    """Diffusion for ``[processes.<name>]``; solved kernels are memoized in ``cache``."""
    p = cfg.resolved["processes"][name]
    params, field = cfg.params, f"processes.{name}"
    if p["kind"] == "ou":
        return ou_process(int(p["dim"]), _number(p["variance"], params, field + ".variance"))
    if p["kind"] == "expr":
        d = len(p["drift"])
        drift = _vector_field(p["drift"], d, params, field + ".drift")
        sd = p["sqrt_diffusion"]
        if isinstance(sd, str):
            e = _sym(sd, d, params, field + ".sqrt_diffusion")
            if e.free_symbols:
                comp = _lambdify(e, d)
                sqrt = lambda x: np.repeat(comp(x)[:, None], d, axis=1)  # noqa: E731
            else:
                sqrt = constant_field(float(e), d)
        elif isinstance(sd, list) and all(isinstance(s, str) for s in sd):
            if len(sd) != d:
                raise ConfigError("diagonal sqrt_diffusion needs one entry per coordinate", field)
            sqrt = _vector_field(sd, d, params, field + ".sqrt_diffusion")
        elif isinstance(sd, list) and all(isinstance(r, list) for r in sd):
            rows = [_vector_field([str(s) for s in r], d, params, field + ".sqrt_diffusion") for r in sd]
            if len(rows) != d or any(len(r) != d for r in sd):
                raise ConfigError("sqrt_diffusion matrix must be d x d", field)
            sqrt = lambda x: np.stack([r(x) for r in rows], axis=1)  # noqa: E731
        else:
            sqrt = constant_field(_array(sd, params, field + ".sqrt_diffusion"), d)
        return Diffusion(drift, sqrt, d, f"expr:{name}")
    from .moment_map import solve_moment_map_1d
    from .stein import constant_kernel, kernel_closed_form_1d, kernel_from_moment_map, stein_sde

    cache = {} if cache is None else cache
    key = (p["measure"], p["kernel"])
    if key not in cache:
        m = build_measure(cfg, p["measure"])
        if p["kernel"] == "constant":
            if m.params.get("kind") != "gaussian":
                raise ConfigError("a constant kernel needs a Gaussian measure", field + ".kernel")
            k = constant_kernel(np.array(m.params["cov"]), m)
        elif m.dimension != 1:
            raise ConfigError("solved kernels are available for 1D measures only", field + ".kernel")
        elif p["kernel"] == "moment_map":
            k = kernel_from_moment_map(solve_moment_map_1d(m))
        else:
            k = kernel_closed_form_1d(m)
        cache[key] = k
    return stein_sde(cache[key], label=f"stein:{p['measure']}")


def build_scenario(cfg, threads=1):
    if cfg.theorem is None:
        raise ConfigError("scenario.theorem is not set", "scenario.theorem")
    cache = {}
    x, y = build_process(cfg, "x", cache), build_process(cfg, "y", cache)
    mu, nu = build_measure(cfg, "mu"), build_measure(cfg, "nu")
    if not (x.dimension == y.dimension == mu.dimension == nu.dimension):
        raise ConfigError("processes and measures must share one dimension", "processes")
    n, b = cfg.resolved["numerics"], cfg.resolved["bounds"]

    def num(sec, k):
        return cfg.value(sec, k)

    return Scenario(
        theorem=cfg.theorem,
        pair=DiffusionPair.from_halves(x, y),
        mu=mu,
        nu=nu,
        name=cfg.resolved["scenario"]["name"],
        seed=cfg.seed,
        n_samples=n["n_samples"],
        batches=n["batches"],
        T=num("numerics", "T"),
        dt=num("numerics", "dt"),
        threads=threads,
        R=num("bounds", "R"),
        p=num("bounds", "p"),
        kappa_source=b["kappa_source"],
        kappa=num("bounds", "kappa"),
        C_H=num("bounds", "C_H"),
        g_source=b["g_source"],
        g_norm=num("bounds", "g_norm"),
        lusin_points=n["lusin_points"],
        L=num("bounds", "L"),
        alpha=num("bounds", "alpha"),
        variant=b["variant"],
        C=num("bounds", "C"),
        truncation_C=num("bounds", "truncation_C"),
        discrepancy_n=n["discrepancy_n"],
    )
