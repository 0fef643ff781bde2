import math

import numpy as np
import pytest

from invstab.cli import bundled_configs, find_config
from invstab.config import (
    ConfigError,
    ExperimentConfig,
    build_measure,
    build_process,
    config_hash,
    load_config,
    parse_config,
    parse_field,
    sweep_points,
)

BASE = """\
[scenario]
name = "t"
theorem = 2
seed = 5

[params]
s = 0.5

[measures.mu]
kind = "gaussian"
mean = 0.0
cov = 1.0

[measures.nu]
kind = "gaussian"
mean = 0.0
cov = "s"

[processes.x]
kind = "ou"
variance = 1.0

[processes.y]
kind = "ou"
variance = "s"

[bounds]
L = 1.0
kappa = 1.0
C_H = 1.0
"""


def test_bundled_configs_parse():
    names = bundled_configs()
    assert {"ou_scaled.toml", "thm1_logcosh.toml", "thm3_logcosh.toml"} <= set(names)
    for n in names:
        cfg = load_config(find_config(n))
        assert cfg.theorem in (1, 2, 3)


def test_defaults_are_echoed():
    cfg = parse_config(BASE)
    num = cfg.resolved["numerics"]
    assert num["T"] == 1.0 and num["dt"] == 1e-3 and num["n_samples"] == 2000
    assert cfg.resolved["bounds"]["C"] == 1.0
    assert cfg.resolved["output"]["dir"] == "out"


def test_unknown_key_reports_line():
    text = BASE.replace("L = 1.0", "L = 1.0\nkapa = 2.0")
    with pytest.raises(ConfigError) as exc:
        parse_config(text, source="x.toml")
    line = text.splitlines().index("kapa = 2.0") + 1
    assert exc.value.line == line
    assert "kapa" in str(exc.value)
    assert f"x.toml:{line}:" in str(exc.value)


def test_unknown_table_reports_line():
    text = BASE + "\n[extras]\nfoo = 1\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.line == text.splitlines().index("[extras]") + 1


def test_unknown_measure_key():
    with pytest.raises(ConfigError, match="variance"):
        parse_config(BASE.replace('cov = "s"', 'cov = "s"\nvariance = 2.0'))


@pytest.mark.parametrize("R", ["1.0", "0.5"])
def test_theorem1_R_precondition(R):
    text = BASE.replace("theorem = 2", "theorem = 1").replace("L = 1.0", f"R = {R}\ng_source = \"analytic\"\n"
                                                                       "g_norm = 1.0")
    with pytest.raises(ConfigError, match="for any R > 1") as exc:
        parse_config(text)
    assert exc.value.field == "bounds.R"
    assert exc.value.line == text.splitlines().index(f"R = {R}") + 1


def test_invalid_toml():
    with pytest.raises(ConfigError, match="invalid TOML"):
        parse_config("[scenario\nname = 1")


def test_bad_expression_names_field():
    with pytest.raises(ConfigError, match="bounds.kappa"):
        parse_config(BASE.replace("kappa = 1.0", 'kappa = "t +"')).value("bounds", "kappa")


def test_round_trip_preserves_hash():
    cfg = parse_config(BASE)
    again = parse_config(cfg.dumps())
    assert again.resolved == cfg.resolved
    assert again.hash == cfg.hash


def test_round_trip_bundled():
    for n in bundled_configs():
        cfg = load_config(find_config(n))
        assert parse_config(cfg.dumps()).hash == cfg.hash


def test_hash_is_order_independent():
    a = {"x": 1, "y": {"b": 2, "a": 3}}
    b = {"y": {"a": 3, "b": 2}, "x": 1}
    assert config_hash(a) == config_hash(b)


def test_overrides_change_hash():
    cfg = parse_config(BASE)
    assert cfg.with_overrides(seed=6).hash != cfg.hash
    assert cfg.with_overrides(seed=5).hash == cfg.hash
    assert cfg.with_overrides(params={"s": 0.25}).hash != cfg.hash


def test_parameter_substitution():
    cfg = parse_config(BASE).with_overrides(params={"s": 0.25})
    nu = build_measure(cfg, "nu")
    assert np.allclose(nu.params["cov"], [[0.25]])
    y = build_process(cfg, "y")
    assert np.allclose(y.sqrt_diffusion(np.zeros((2, 1))), 0.5)


def test_sweep_points():
    cfg = load_config(find_config("ou_scaled"))
    pts = sweep_points(cfg)
    assert [v for v, _ in pts] == [0.25, 0.5, 0.9]
    for v, c in pts:
        assert c.params["s"] == v and "sweep" not in c.resolved
    assert sweep_points(parse_config(BASE))[0][0] is None


def test_inf_and_expressions():
    cfg = parse_config(BASE.replace("C_H = 1.0", 'C_H = "exp(0)"\np = "inf"'))
    assert cfg.value("bounds", "C_H") == 1.0
    assert math.isinf(cfg.value("bounds", "p"))


def test_parse_field():
    f = parse_field("x1 * x2, sin(x1)", 2)
    x = np.array([[1.0, 2.0], [0.5, -1.0]])
    assert np.allclose(f(x), np.column_stack([x[:, 0] * x[:, 1], np.sin(x[:, 0])]))
    g = parse_field("a * x1", 1, {"a": 3.0})
    assert np.allclose(g(np.array([[2.0]])), [[6.0]])
    with pytest.raises(ConfigError):
        parse_field("x3", 2)


def test_gibbs_measure_from_expression():
    cfg = load_config(find_config("thm1_logcosh"))
    nu = build_measure(cfg, "nu")
    x = np.linspace(-2, 2, 5)[:, None]
    eps = cfg.params["eps"]
    v = x[:, 0] ** 2 / 2 + eps * np.log(np.cosh(x[:, 0]))
    lp = nu.log_pdf(x)
    assert np.allclose(lp - lp[2], -(v - v[2]), atol=1e-12)


def test_experiment_config_is_plain_data():
    cfg = parse_config(BASE)
    copy = ExperimentConfig(cfg.resolved, "elsewhere")
    assert copy.hash == cfg.hash
