import itertools
import math

import numpy as np
import pytest
from scipy import optimize

from invstab.lusin import MAX_POINTS, estimate_lusin_witness, pair_constants
from invstab.streams import generator


def wiggly(x):
    return 3.0 * np.sin(4.0 * x) + x ** 3


def _constraints(C):
    n = C.shape[0]
    rows, rhs = [], []
    for i, j in itertools.combinations(range(n), 2):
        a = np.zeros(n)
        a[i] = a[j] = 1.0
        rows.append(a)
        rhs.append(C[i, j])
    for k in range(n):
        a = np.zeros(n)
        a[k] = 1.0
        rows.append(a)
        rhs.append(1.0)
    return np.array(rows), np.array(rhs)


def brute_force_qp(C, w):
    """min sum w g^2 s.t. g_i + g_j >= c_ij, g >= 1, by enumerating active sets.

    The optimum is the minimizer of the objective on the face cut out by its
    active constraints; every face with at most n constraints is solved through
    its KKT system and the best feasible candidate is returned.
    """
    A, b = _constraints(C)
    n = w.size
    best = math.inf
    for k in range(n + 1):
        for S in itertools.combinations(range(len(b)), k):
            As, bs = A[list(S)], b[list(S)]
            K = np.zeros((n + k, n + k))
            K[:n, :n] = 2 * np.diag(w)
            K[:n, n:] = -As.T
            K[n:, :n] = As
            rhs = np.concatenate([np.zeros(n), bs])
            sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
            if np.linalg.norm(K @ sol - rhs) > 1e-9:
                continue
            g = sol[:n]
            if np.all(A @ g >= b - 1e-10):
                best = min(best, float(np.sum(w * g ** 2)))
    return best


def brute_force_lp(C, w):
    """min sum w g over vertices of the feasible polyhedron."""
    A, b = _constraints(C)
    n = w.size
    best = math.inf
    for S in itertools.combinations(range(len(b)), n):
        As = A[list(S)]
        if abs(np.linalg.det(As)) < 1e-12:
            continue
        g = np.linalg.solve(As, b[list(S)])
        if np.all(A @ g >= b - 1e-10):
            best = min(best, float(w @ g))
    return best


def test_linear_field_gives_floor():
    x = generator(0, 40).uniform(-3, 3, 40)
    wit = estimate_lusin_witness(x, lambda z: z, p=2)
    assert np.allclose(wit.g_values, 1.0)
    assert wit.norm_p == pytest.approx(1.0)


def test_two_point_symmetric():
    x = np.array([[0.0], [1.0]])
    wit = estimate_lusin_witness(x, lambda z: 4 * z, p=2)
    assert np.allclose(wit.g_values, [2.0, 2.0], atol=1e-9)


@pytest.mark.parametrize("seed", range(8))
def test_n5_matches_active_set_enumeration(seed):
    g = generator(seed, 41)
    x = g.uniform(-2, 2, (5, 1))
    w = g.dirichlet(np.ones(5))
    wit = estimate_lusin_witness(x, wiggly, weights=w, p=2)
    C = pair_constants(wit.points, [wiggly])
    assert wit.objective == pytest.approx(brute_force_qp(C, wit.weights), abs=1e-6)
    assert wit.kkt_residual < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_n5_lp_matches_vertex_enumeration(seed):
    g = generator(seed, 42)
    x = g.uniform(-2, 2, (5, 1))
    wit = estimate_lusin_witness(x, wiggly, p=1)
    C = pair_constants(wit.points, [wiggly])
    assert wit.objective == pytest.approx(brute_force_lp(C, wit.weights), abs=1e-6)


@pytest.mark.parametrize("p", [1.5, 3.0, 4.0])
def test_general_p_against_generic_solver(p):
    g = generator(int(p * 10), 43)
    x = g.uniform(-2, 2, (6, 2))
    f = lambda z: np.column_stack([wiggly(z[:, 0]), z[:, 0] * z[:, 1] ** 2])  # noqa: E731
    wit = estimate_lusin_witness(x, f, p=p)
    C = pair_constants(wit.points, [f])
    A, b = _constraints(C)
    w = wit.weights
    ref = optimize.minimize(lambda v: np.sum(w * v ** p), np.full(6, C.max()), jac=lambda v: p * w * v ** (p - 1),
                            constraints=[{"type": "ineq", "fun": lambda v: A @ v - b, "jac": lambda v: A}],
                            method="SLSQP", options={"ftol": 1e-14, "maxiter": 1000})
    assert wit.objective == pytest.approx(ref.fun, rel=1e-6)


@pytest.mark.parametrize("p", [1.0, 2.0, 4.0])
def test_feasibility_and_kkt(p):
    x = generator(3, 44).normal(size=(300, 1))
    wit = estimate_lusin_witness(x, wiggly, p=p)
    C = pair_constants(wit.points, [wiggly])
    assert wit.max_violation(C) <= 1e-8
    assert np.all(wit.g_values >= 1.0)
    assert wit.kkt_residual < 1e-6 and wit.converged


@pytest.mark.parametrize("L", [0.5, 3.0, 7.0])
def test_lipschitz_bound(L):
    x = generator(int(L * 10), 45).normal(size=(200, 1))
    f = lambda z: L * np.sin(z)  # noqa: E731
    for p in (1.0, 2.0, 4.0):
        assert estimate_lusin_witness(x, f, p=p).norm_p <= max(L / 2, 1.0) + 1e-6


def test_nested_sets_monotone():
    x = generator(7, 46).normal(size=(120, 1))
    sub = estimate_lusin_witness(x[:60], wiggly, p=2)
    full = estimate_lusin_witness(x, wiggly, p=2)
    # the larger problem's witness is feasible on the subset, so its unit-weight sum there is no smaller
    assert np.sum(full.g_values[:60] ** 2) >= np.sum(sub.g_values ** 2) - 1e-8


def test_matrix_field_and_multiple_fields():
    x = generator(8, 47).normal(size=(50, 1))
    a = lambda z: -z + 2 * np.sin(3 * z)  # noqa: E731
    tau = lambda z: (1.5 + np.tanh(2 * z))[:, :, None] * np.ones((1, 1, 1))  # noqa: E731
    both = estimate_lusin_witness(x, [a, tau], p=2)
    only_a = estimate_lusin_witness(x, a, p=2)
    assert both.objective >= only_a.objective - 1e-10
    C = pair_constants(both.points, [a, tau])
    assert both.max_violation(C) <= 1e-8


def test_duplicates_merged():
    x = np.array([[0.0], [0.0], [1.0]])
    wit = estimate_lusin_witness(x, lambda z: 4 * z, p=2)
    assert wit.diagnostics["merged_points"] == 1
    assert wit.points.shape[0] == 2
    with pytest.raises(ValueError):
        estimate_lusin_witness(x, lambda z: np.array([[0.0], [1.0], [2.0]]), p=2)


def test_input_validation():
    with pytest.raises(ValueError):
        estimate_lusin_witness(np.zeros((3, 1)) + np.arange(3)[:, None], lambda z: z, p=0.5)
    with pytest.raises(ValueError):
        estimate_lusin_witness(np.arange(MAX_POINTS + 1, dtype=float)[:, None], lambda z: z)
