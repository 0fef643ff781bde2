import itertools
import math

import numpy as np
import pytest

from invstab.measures import EmpiricalMeasure, make_gaussian, sample
from invstab.sde_sim import DiffusionPair, ou_process, simulate_coupled
from invstab.streams import generator
from invstab.transport import (
    FiniteTimeScenario,
    ScaleError,
    TransportCost,
    check_eps_optimized,
    check_finite_time_bound,
    check_interpolation,
    check_truncation_lemma,
    cost_matrix,
    coupled_log_cost,
    solve_ot,
    w2_empirical,
    w2_gaussian_oracle,
)

COSTS = [
    TransportCost.quadratic(),
    TransportCost.truncated_quadratic(1.5),
    TransportCost.truncated_first(0.8),
    TransportCost.logarithmic(0.3),
]


def U(points):
    return EmpiricalMeasure.uniform(np.asarray(points, dtype=float))


def cloud(seed, n, d, scale=1.0):
    return U(scale * generator(seed, 31).standard_normal((n, d)))


def brute_force(A, B, cost):
    C = cost_matrix(A, B, cost)
    n = C.shape[0]
    return min(C[np.arange(n), list(p)].mean() for p in itertools.permutations(range(n)))


def test_identical_two_point_clouds():
    plan = solve_ot(U([[0.0], [1.0]]), U([[0.0], [1.0]]), TransportCost.quadratic())
    assert plan.cost_value == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(plan.plan, np.eye(2) / 2)


def test_truncated_point_masses():
    plan = solve_ot(U([[0.0]]), U([[3.0]]), TransportCost.truncated_quadratic(4.0))
    assert plan.cost_value == pytest.approx(4.0)


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("cost", COSTS, ids=lambda c: c.kind)
def test_six_point_brute_force(seed, cost):
    A, B = cloud(seed, 6, 2), cloud(seed + 100, 6, 2, 1.5)
    assert solve_ot(A, B, cost).cost_value == pytest.approx(brute_force(A, B, cost), abs=1e-9)


@pytest.mark.parametrize("n", [3, 5, 7])
@pytest.mark.parametrize("cost", COSTS, ids=lambda c: c.kind)
def test_small_uniform_brute_force(n, cost):
    A, B = cloud(n, n, 1), cloud(n + 50, n, 1, 2.0)
    assert solve_ot(A, B, cost).cost_value == pytest.approx(brute_force(A, B, cost), abs=1e-9)


@pytest.mark.parametrize("cost", COSTS, ids=lambda c: c.kind)
def test_plan_feasibility_and_value(cost):
    g = generator(4, 32)
    A = EmpiricalMeasure(g.standard_normal((9, 2)), g.dirichlet(np.ones(9)))
    B = EmpiricalMeasure(g.standard_normal((13, 2)) + 1, g.dirichlet(np.ones(13)))
    plan = solve_ot(A, B, cost)
    assert np.all(plan.plan >= 0)
    assert np.allclose(plan.plan.sum(axis=1), A.weights, atol=1e-9)
    assert np.allclose(plan.plan.sum(axis=0), B.weights, atol=1e-9)
    assert plan.cost_value == pytest.approx(float(np.sum(plan.plan * cost_matrix(A, B, cost))), abs=1e-9)
    assert plan.marginal_err <= 1e-9


@pytest.mark.parametrize("cost", COSTS, ids=lambda c: c.kind)
def test_symmetry(cost):
    A, B = cloud(7, 20, 3), cloud(8, 25, 3, 2.0)
    assert solve_ot(A, B, cost).cost_value == pytest.approx(solve_ot(B, A, cost).cost_value, abs=1e-12)


def test_monotonicity_in_R_and_delta():
    A, B = cloud(9, 30, 2), cloud(10, 30, 2, 2.5)
    w2sq = solve_ot(A, B, TransportCost.quadratic()).cost_value
    tr = [solve_ot(A, B, TransportCost.truncated_quadratic(R)).cost_value for R in (0.1, 0.5, 1, 2, 5, 50)]
    assert all(a <= b + 1e-12 for a, b in zip(tr, tr[1:]))
    assert all(t <= w2sq + 1e-12 for t in tr)
    lg = [solve_ot(A, B, TransportCost.logarithmic(dl)).cost_value for dl in (0.01, 0.1, 1, 10)]
    assert all(a >= b - 1e-12 for a, b in zip(lg, lg[1:]))


def test_degenerate_parameters_rejected():
    for bad in (lambda: TransportCost.truncated_quadratic(0.0), lambda: TransportCost.logarithmic(0.0),
                lambda: TransportCost.truncated_first(-1.0)):
        with pytest.raises(ValueError):
            bad()


def test_scale_limit():
    A = U(np.zeros((4000, 2)))
    B = EmpiricalMeasure(np.ones((3000, 2)), np.full(3000, 1 / 3000))
    with pytest.raises(ScaleError):
        solve_ot(A, B, TransportCost.quadratic())


def test_gaussian_oracle_examples():
    assert w2_gaussian_oracle(0, 1, 0, 1) == pytest.approx(0.0, abs=1e-12)
    assert w2_gaussian_oracle(0, 1, 0, 4) == pytest.approx(1.0, abs=1e-12)
    for d, s in ((2, 0.25), (3, 4.0)):
        ref = math.sqrt(d) * abs(1 - math.sqrt(s))
        assert w2_gaussian_oracle(np.zeros(d), np.eye(d), np.zeros(d), s * np.eye(d)) == pytest.approx(ref)
    # non-commuting covariances against the Bures formula with scipy matrix roots
    c1, c2 = np.array([[2.0, 0.5], [0.5, 1.0]]), np.array([[1.0, -0.3], [-0.3, 0.5]])
    r1 = np.real(_sqrtm(c1))
    ref = math.sqrt(np.trace(c1 + c2 - 2 * np.real(_sqrtm(r1 @ c2 @ r1))))
    assert w2_gaussian_oracle([0, 0], c1, [0, 0], c2) == pytest.approx(ref, rel=1e-10)
    with pytest.raises(ValueError):
        w2_gaussian_oracle(0, -1, 0, 1)


def _sqrtm(S):
    from scipy.linalg import sqrtm

    return sqrtm(S)


def test_gaussian_oracle_against_large_samples():
    a = sample(make_gaussian(0.0, 1.0), 4000, 1)
    b = sample(make_gaussian(0.0, 4.0), 4000, 1)
    assert w2_empirical(a, b) == pytest.approx(1.0, rel=0.05)


def test_interpolation_examples():
    A, B = U([[0.0]]), U([[1.0]])
    r = check_interpolation(A, B, R=4, delta=1, eps=1)
    assert r.lhs == pytest.approx(1.0)
    assert r.details["D"] == pytest.approx(math.log(2))
    assert r.rhs == pytest.approx(2 + 4 + 4 * math.log(2) / math.log(5), rel=1e-12)
    assert r.rhs == pytest.approx(7.723, abs=5e-4)
    same = check_interpolation(cloud(1, 10, 2), cloud(1, 10, 2), R=2, delta=0.5, eps=0.1)
    assert same.lhs == 0 and same.slack == same.rhs > 0


def test_eps_optimized_examples():
    r = check_eps_optimized(U([[0.0]]), U([[1.0]]), R=4, delta=1)
    assert r.lhs == pytest.approx(1.0)
    assert r.rhs == pytest.approx(8 * (1 + math.log(2) / math.log(5)), rel=1e-12)
    assert r.rhs == pytest.approx(11.45, abs=5e-3)
    A = cloud(2, 12, 2)
    assert check_eps_optimized(A, A, R=3, delta=0.5).slack == pytest.approx(2 * 3 * 0.5)
    with pytest.raises(ValueError):
        check_eps_optimized(A, A, R=1, delta=1)


@pytest.mark.parametrize("denominator", ["proof", "stated"])
@pytest.mark.parametrize("variant", ["w2", "w1"])
def test_interpolation_small_sweep(variant, denominator):
    for seed in range(15):
        g = generator(seed, 33)
        n, d = int(g.integers(2, 30)), int(g.integers(1, 4))
        A = U(g.standard_normal((n, d)))
        B = U(g.standard_normal((int(g.integers(2, 30)), d)) * g.uniform(0.2, 3) + g.uniform(-1, 1))
        for R, delta, eps in itertools.product((1, 4), (0.1, 1), (0.1, 1)):
            r = check_interpolation(A, B, R, delta, eps, variant=variant, denominator=denominator)
            assert r.slack >= -1e-9


def test_truncation_lemma_examples():
    A = cloud(3, 40, 1)
    r = check_truncation_lemma(A, A, M=2.0)
    assert r.lhs == pytest.approx(0.0, abs=1e-15) and r.rhs == pytest.approx(0.0, abs=1e-15)
    a = sample(make_gaussian(0.0, 1.0), 500, 3)
    b = sample(make_gaussian(0.0, 4.0), 500, 3)
    r = check_truncation_lemma(a, b, M=1.0, C=100, find_min_constant=True)
    assert r.slack >= 0
    assert 0 < r.details["min_C"] <= 100
    tiny = check_truncation_lemma(a, b, M=1.0, C=1e-6)
    assert tiny.slack < 0 and tiny.details["note"] == "constant too small"


def _ou_ensemble(s, delta_times=(0.5, 1.0, 2.0), same=False, seed=0):
    pair = DiffusionPair.from_halves(ou_process(1), ou_process(1, 1.0 if same else s))
    nu = make_gaussian(0.0, 1.0 if same else s)
    return simulate_coupled(pair, nu, max(delta_times), 1e-3, 2000, seed, record_times=list(delta_times))


def test_coupled_log_cost_identical_zero():
    e = _ou_ensemble(1.0, same=True)
    est = coupled_log_cost(e, 1.0, 0.1)
    assert est.value == 0.0 and est.se == 0.0


def test_coupled_log_cost_bounds_ot_and_decreases_in_delta():
    e = _ou_ensemble(0.5)
    for delta in (0.1, 1.0):
        est = coupled_log_cost(e, 1.0, delta)
        ot_val = solve_ot(U(e.paths_x[:500, 1]), U(e.paths_y[:500, 1]), TransportCost.logarithmic(delta)).cost_value
        sub = coupled_log_cost(type(e)(e.times, e.paths_x[:500], e.paths_y[:500], e.seed, e.dt), 1.0, delta)
        assert sub.value >= ot_val - 1e-12
        assert math.isfinite(est.value)
    assert coupled_log_cost(e, 1.0, 0.1).value > coupled_log_cost(e, 1.0, 1.0).value


def test_finite_time_bound_ou_scaled():
    s = 0.5
    pair = DiffusionPair.from_halves(ou_process(1), ou_process(1, s))
    sc = FiniteTimeScenario(pair, make_gaussian(0.0, 1.0), make_gaussian(0.0, s), p=math.inf, g_norm=1.0, seed=2)
    beta = abs(1 - math.sqrt(s))
    reps = check_finite_time_bound(sc, [0.5, 1.0, 2.0], delta=beta)
    for r in reps:
        assert r.lhs <= r.rhs + 3 * r.lhs_se


def test_finite_time_bound_identical_linear_in_t():
    ou = ou_process(1)
    sc = FiniteTimeScenario(DiffusionPair.from_halves(ou, ou), make_gaussian(0.0, 1.0), make_gaussian(0.0, 1.0),
                            p=math.inf, g_norm=1.0, n_traj=500)
    reps = check_finite_time_bound(sc, [0.5, 1.0, 2.0], delta=0.1)
    assert all(r.lhs == 0 for r in reps)
    slopes = [r.slack / r.details["t"] for r in reps]
    assert slopes == pytest.approx([slopes[0]] * 3, rel=1e-12)
    with pytest.raises(ValueError):
        check_finite_time_bound(FiniteTimeScenario(sc.pair, sc.mu, sc.nu, math.inf, None), 1.0, 0.1)
