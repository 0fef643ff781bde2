import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from invstab import cli
from invstab.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main
from invstab.config import config_hash, load_config
from invstab.measures import EmpiricalMeasure
from invstab.transport import w2_empirical

OU_VIOLATED = """\
# nu is not invariant for y and the horizon is too short to forget the start
[scenario]
name = "broken"
theorem = 2
seed = 0

[measures.mu]
kind = "gaussian"
mean = 0.0
cov = 1.0

[measures.nu]
kind = "gaussian"
mean = 0.0
cov = 0.25

[processes.x]
kind = "ou"

[processes.y]
kind = "ou"

[numerics]
T = 0.01
dt = 1e-3
n_samples = 1000

[bounds]
L = 1.0
kappa = 1.0
C_H = 1.0
"""


def _json(path):
    return json.loads(path.read_text())


def _csv_hash(path):
    first = path.read_text().splitlines()[0]
    assert first.startswith("# config_hash=")
    return first.split("=", 1)[1]


def _write_points(path, pts, weights=None):
    d = pts.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{k + 1}" for k in range(d)] + (["weight"] if weights is not None else []))
        for i, p in enumerate(pts):
            w.writerow([repr(float(v)) for v in p] + ([repr(float(weights[i]))] if weights is not None else []))


@pytest.fixture(scope="module")
def sweep_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("sweep")
    codes = {}
    for workers in (1, 3):
        codes[workers] = main(["sweep", "ou_scaled", "--out", str(base / f"w{workers}"), "--workers", str(workers)])
    return base, codes


def test_sweep_outputs(sweep_runs):
    base, codes = sweep_runs
    assert codes[1] == EXIT_OK
    out = base / "w1"
    cfg = load_config(cli.find_config("ou_scaled"))
    summary = _json(out / "sweep.json")
    assert summary["config_hash"] == cfg.hash
    assert _csv_hash(out / "sweep.csv") == cfg.hash
    rows = list(csv.reader(out.joinpath("sweep.csv").read_text().splitlines()[1:]))
    assert rows[0] == ["s", "beta", "lhs", "lhs_se", "rhs", "slack", "verdict"]
    assert [float(r[0]) for r in rows[1:]] == [0.25, 0.5, 0.9]
    for r in rows[1:]:
        assert r[-1] == "holds"
    for p in summary["points"]:
        rep = _json(out / p["dir"] / "report.json")
        assert rep["config_hash"] == p["config_hash"]
        assert rep["verdict"] == "holds"
        assert (out / p["dir"] / "resolved.toml").exists()
    assert not list(out.rglob("*.tmp"))


def test_sweep_parallel_matches_serial(sweep_runs):
    base, codes = sweep_runs
    assert codes[3] == EXIT_OK
    files = sorted(p.relative_to(base / "w1") for p in (base / "w1").rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(base / "w3") for p in (base / "w3").rglob("*") if p.is_file())
    for f in files:
        assert (base / "w1" / f).read_bytes() == (base / "w3" / f).read_bytes(), f


def test_resolved_config_reproduces_report(sweep_runs, tmp_path):
    base, _ = sweep_runs
    point = base / "w1" / "s=0.5"
    out = tmp_path / "again.json"
    assert main(["verify-bounds", "--scenario", str(point / "resolved.toml"), "--out", str(out)]) == EXIT_OK
    assert out.read_bytes() == (point / "report.json").read_bytes()
    assert load_config(str(tmp_path / "again.resolved.toml")).hash == _json(out)["config_hash"]


def test_verify_bounds_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert main(["verify-bounds", "--scenario", "ou_scaled", "--seed", "4", "--out", str(p)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    rep = _json(a)
    assert rep["inputs"]["seed"] == 4
    assert rep["resolved_config"]["scenario"]["seed"] == 4
    assert rep["config_hash"] == config_hash(rep["resolved_config"])


def test_violated_verdict_exit_code(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text(OU_VIOLATED)
    out = tmp_path / "r.json"
    assert main(["verify-bounds", "--scenario", str(path), "--out", str(out)]) == EXIT_FAIL
    assert _json(out)["verdict"] == "violated"


def test_schema_error_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    text = OU_VIOLATED.replace("theorem = 2", "theorem = 1").replace("L = 1.0", "R = 1.0")
    path.write_text(text)
    assert main(["verify-bounds", "--scenario", str(path), "--out", str(tmp_path / "r.json")]) == EXIT_USAGE
    err = capsys.readouterr().err
    line = text.splitlines().index("R = 1.0") + 1
    assert f"{path}:{line}:" in err and "for any R > 1" in err
    assert not (tmp_path / "r.json").exists()


def test_missing_config_exit_code(capsys):
    assert main(["verify-bounds", "--scenario", "no_such_config"]) == EXIT_USAGE
    assert "ou_scaled.toml" in capsys.readouterr().err


def test_threads_env(monkeypatch):
    ns = type("A", (), {"threads": None})()
    monkeypatch.delenv(cli.THREADS_ENV, raising=False)
    assert cli._threads(ns) == 1
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert cli._threads(ns) == 3
    ns.threads = 2
    assert cli._threads(ns) == 2
    monkeypatch.setenv(cli.THREADS_ENV, "many")
    ns.threads = None
    with pytest.raises(cli.ConfigError):
        cli._threads(ns)


def test_threads_do_not_change_results(tmp_path, monkeypatch):
    outs = []
    for t in ("1", "4"):
        monkeypatch.setenv(cli.THREADS_ENV, t)
        p = tmp_path / f"sim{t}"
        assert main(["simulate", "ou_scaled", "--out", str(p)]) == EXIT_OK
        outs.append((p / "simulate.json").read_bytes())
    assert outs[0] == outs[1]


def test_simulate_dump_paths(tmp_path):
    assert main(["simulate", "ou_scaled", "--out", str(tmp_path), "--dump-paths", "--records", "3"]) == EXIT_OK
    lines = (tmp_path / "paths.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1] == "traj,t,x_1,y_1"
    assert len(lines) == 2 + 2000 * 3
    rep = _json(tmp_path / "simulate.json")
    assert rep["n_traj"] == 2000 and len(rep["times"]) == 3


def test_transport_matches_library(tmp_path):
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(30, 2)), rng.normal(size=(20, 2)) + 1.0
    wb = rng.uniform(0.5, 1.5, 20)
    _write_points(tmp_path / "a.csv", a)
    _write_points(tmp_path / "b.csv", b, wb)
    out = tmp_path / "t"
    assert main(["transport", str(tmp_path / "a.csv"), str(tmp_path / "b.csv"), "--out", str(out)]) == EXIT_OK
    rep = _json(out / "transport.json")
    ref = w2_empirical(EmpiricalMeasure.uniform(a), EmpiricalMeasure(b, wb / wb.sum())) ** 2
    assert rep["cost_value"] == pytest.approx(ref, rel=1e-9)
    assert rep["marginal_err"] < 1e-9
    assert main(["transport", str(tmp_path / "a.csv"), str(tmp_path / "b.csv"), "--cost", "w2trunc"]) == EXIT_USAGE


def test_transport_rejects_bad_header(tmp_path):
    (tmp_path / "a.csv").write_text("y_1\n1.0\n")
    assert main(["transport", str(tmp_path / "a.csv"), str(tmp_path / "a.csv")]) == EXIT_USAGE


def test_lusin_command(tmp_path):
    _write_points(tmp_path / "p.csv", np.array([[0.0], [1.0]]))
    out = tmp_path / "l"
    assert main(["lusin", str(tmp_path / "p.csv"), "--field", "4*x1", "--out", str(out), "--dump-g"]) == EXIT_OK
    rep = _json(out / "lusin.json")
    assert rep["norm_p"] == pytest.approx(2.0, abs=1e-9)
    assert rep["kkt_residual"] < 1e-6
    for key in ("objective", "active_pairs"):
        assert key in rep
    assert _csv_hash(out / "lusin_g.csv") == rep["config_hash"]


def test_moment_map_command(tmp_path):
    assert main(["moment-map", "thm1_logcosh", "--measure", "nu", "--out", str(tmp_path)]) == EXIT_OK
    rep = _json(tmp_path / "moment_map.json")
    assert rep["passed"] and rep["hessian_bounds"]["passed"]
    assert rep["monge_ampere_residual"] < 1e-6
    assert (tmp_path / "moment_map.csv").read_text().splitlines()[1] == "x,phi,phi_prime,phi_second,G"


def test_stein_check_command(tmp_path):
    code = main(["stein-check", "ou_scaled", "--kernel", "constant", "--seed", "0", "--n", "20000",
                 "--out", str(tmp_path)])
    rep = _json(tmp_path / "stein_check.json")
    assert code == (EXIT_OK if rep["passed"] else EXIT_FAIL)
    assert rep["passed"]
    assert main(["stein-check", "thm1_logcosh", "--measure", "nu", "--method", "quadrature",
                 "--out", str(tmp_path / "q")]) == EXIT_OK


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "invstab.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("simulate", "transport", "moment-map", "stein-check", "lusin", "verify-bounds", "sweep"):
        assert sub in res.stdout


def test_json_sanitizes_non_finite(tmp_path):
    cli.write_json(tmp_path / "x.json", {"a": float("inf"), "b": np.float64(1.5), "c": np.arange(2)}, "h")
    body = _json(tmp_path / "x.json")
    assert body == {"config_hash": "h", "a": "inf", "b": 1.5, "c": [0, 1]}
