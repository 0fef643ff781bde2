"""Exact optimal transport between small empirical measures.

Costs: quadratic, truncated quadratic ``min(|x-y|^2, R)``, truncated first
order ``min(|x-y|, R)`` and logarithmic ``ln(1 + |x-y|^2 / delta^2)``. The
truncated and logarithmic costs are concave in the squared distance, which is
irrelevant to the LP: it is solved on the cost matrix directly.

The inequality checkers compare both sides of the truncation / interpolation
inequalities on exact optimal costs and return a :class:`SlackReport`.
"""

import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .measures import EmpiricalMeasure, Estimate
from .sde_sim import spd_sqrt

for _k in ("PYTORCH", "JAX", "CUPY", "TENSORFLOW"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_k}", "1")
import ot  # noqa: E402

__all__ = [
    "TransportCost",
    "CouplingPlan",
    "SlackReport",
    "ScaleError",
    "cost_matrix",
    "solve_ot",
    "w2_empirical",
    "w2_gaussian_oracle",
    "check_interpolation",
    "check_eps_optimized",
    "check_truncation_lemma",
    "coupled_log_cost",
    "check_finite_time_bound",
    "FiniteTimeScenario",
]

MAX_EXACT_ENTRIES = 10 ** 7


class ScaleError(ValueError):
    """Problem too large for the exact solver."""


@dataclass(frozen=True)
class TransportCost:
    kind: str = "quadratic"
    R: Optional[float] = None
    delta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("quadratic", "truncated_quadratic", "truncated_first", "logarithmic"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.kind.startswith("truncated") and not (self.R is not None and self.R > 0):
            raise ValueError("truncated costs need R > 0")
        if self.kind == "logarithmic" and not (self.delta is not None and self.delta > 0):
            raise ValueError("logarithmic cost needs delta > 0")

    @classmethod
    def quadratic(cls):
        return cls("quadratic")

    @classmethod
    def truncated_quadratic(cls, R):
        return cls("truncated_quadratic", R=R)

    @classmethod
    def truncated_first(cls, R):
        return cls("truncated_first", R=R)

    @classmethod
    def logarithmic(cls, delta):
        return cls("logarithmic", delta=delta)

    def from_squared(self, sq):
        if self.kind == "quadratic":
            return sq
        if self.kind == "truncated_quadratic":
            return np.minimum(sq, self.R)
        if self.kind == "truncated_first":
            return np.minimum(np.sqrt(sq), self.R)
        return np.log1p(sq / self.delta ** 2)


@dataclass
class CouplingPlan:
    plan: np.ndarray
    cost_value: float
    marginal_err: float = 0.0

    @property
    def nnz(self):
        return int(np.count_nonzero(self.plan > 0))


def cost_matrix(A, B, cost):
    return cost.from_squared(cdist(A.points, B.points, metric="sqeuclidean"))


def _is_uniform(w):
    return np.all(np.abs(w - 1.0 / w.size) <= 1e-15)


def solve_ot(A, B, cost=TransportCost(), method="exact", reg=None):
    """Optimal coupling of ``A`` and ``B`` for ``cost``.

    Equal-size uniform clouds are solved as an assignment problem; anything
    else goes to the network simplex. ``method="entropic"`` (Sinkhorn, for
    point estimates only) is the one approximate path and must be asked for.
    """
    if A.dimension != B.dimension:
        raise ValueError("measures live in different dimensions")
    n, m = A.size, B.size
    C = cost_matrix(A, B, cost)
    if method == "entropic":
        reg = reg if reg is not None else 1e-2 * float(np.median(C) or 1.0)
        P = ot.sinkhorn(A.weights, B.weights, C, reg, method="sinkhorn_log", numItermax=10_000)
    elif method == "exact":
        if n * m > MAX_EXACT_ENTRIES:
            raise ScaleError(
                f"{n}x{m} exceeds the exact solver limit of {MAX_EXACT_ENTRIES} entries; subsample the inputs"
            )
        if n == m and _is_uniform(A.weights) and _is_uniform(B.weights):
            if A.dimension == 1 and cost.kind == "quadratic":
                # monotone rearrangement is optimal for convex costs on the line
                rows = np.argsort(A.points[:, 0], kind="stable")
                cols = np.argsort(B.points[:, 0], kind="stable")
            else:
                rows, cols = linear_sum_assignment(C)
            P = np.zeros((n, m))
            P[rows, cols] = 1.0 / n
        else:
            P, info = ot.emd(A.weights, B.weights, C, numItermax=10 ** 8, log=True)
            if info.get("warning"):
                raise RuntimeError(f"network simplex did not converge: {info['warning']}")
    else:
        raise ValueError(f"unknown method {method!r}")
    err = max(np.abs(P.sum(axis=1) - A.weights).max(), np.abs(P.sum(axis=0) - B.weights).max())
    return CouplingPlan(P, float(np.sum(P * C)), float(err))


def w2_empirical(A, B):
    """Exact W2 between empirical measures (sorting for equal uniform clouds on the line)."""
    if A.dimension == B.dimension == 1 and A.size == B.size and _is_uniform(A.weights) and _is_uniform(B.weights):
        a, b = np.sort(A.points[:, 0]), np.sort(B.points[:, 0])
        return math.sqrt(float(np.mean((a - b) ** 2)))
    return math.sqrt(max(solve_ot(A, B, TransportCost.quadratic()).cost_value, 0.0))


def w2_gaussian_oracle(mean1, cov1, mean2, cov2):
    """Closed-form W2 between two Gaussians."""
    m1, m2 = np.atleast_1d(np.asarray(mean1, float)), np.atleast_1d(np.asarray(mean2, float))
    c1 = np.atleast_2d(np.asarray(cov1, float))
    c2 = np.atleast_2d(np.asarray(cov2, float))
    for c in (c1, c2):
        if not np.allclose(c, c.T) or np.linalg.eigvalsh(c).min() <= 0:
            raise ValueError("covariances must be symmetric positive definite")
    r1 = spd_sqrt(c1)
    cross = spd_sqrt(r1 @ c2 @ r1)
    w2sq = float(np.sum((m1 - m2) ** 2) + np.trace(c1 + c2 - 2 * cross))
    return math.sqrt(max(w2sq, 0.0))


@dataclass
class SlackReport:
    lhs: float
    rhs: float
    slack: float
    holds: bool
    lhs_se: float = 0.0
    details: dict = field(default_factory=dict)


def _report(lhs, rhs, tol=1e-9, lhs_se=0.0, **details):
    slack = rhs - lhs
    return SlackReport(lhs, rhs, slack, bool(slack >= -tol - 3.0 * lhs_se), lhs_se, details)


def _exp_term(scale, exponent):
    return math.inf if exponent > 700 else scale * math.exp(exponent)


def check_interpolation(A, B, R, delta, eps, variant="w2", denominator="proof"):
    """Truncated distance vs. the logarithmic cost, for a free parameter ``eps``.

    ``variant="w2"`` bounds the squared truncated W2 by
    ``delta^2 exp(D/eps) + R eps + R D / ln(1 + R/delta^2)``; ``variant="w1"``
    bounds the truncated W1 by ``delta exp(D/eps) + R eps + R D / ln(1 + R^2/delta^2)``.
    ``denominator="stated"`` swaps the two logarithm arguments (the printed
    forms); both versions are valid upper bounds.
    """
    if min(R, delta, eps) <= 0:
        raise ValueError("R, delta and eps must be positive")
    D = solve_ot(A, B, TransportCost.logarithmic(delta)).cost_value
    sq_arg, lin_arg = R / delta ** 2, R ** 2 / delta ** 2
    if denominator == "stated":
        sq_arg, lin_arg = lin_arg, sq_arg
    if variant == "w2":
        lhs = solve_ot(A, B, TransportCost.truncated_quadratic(R)).cost_value
        rhs = _exp_term(delta ** 2, D / eps) + R * eps + R * D / math.log1p(sq_arg)
    elif variant == "w1":
        lhs = solve_ot(A, B, TransportCost.truncated_first(R)).cost_value
        rhs = _exp_term(delta, D / eps) + R * eps + R * D / math.log1p(lin_arg)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return _report(lhs, rhs, D=D, R=R, delta=delta, eps=eps, variant=variant)


def check_eps_optimized(A, B, R, delta):
    """``W~_{2,R}^2 <= 2R(delta + D_delta / ln(1 + R/delta))``, valid for delta < R."""
    if not 0 < delta < R:
        raise ValueError("the optimized bound needs 0 < delta < R")
    D = solve_ot(A, B, TransportCost.logarithmic(delta)).cost_value
    lhs = solve_ot(A, B, TransportCost.truncated_quadratic(R)).cost_value
    rhs = 2 * R * (delta + D / math.log1p(R / delta))
    return _report(lhs, rhs, D=D, R=R, delta=delta)


def truncation_radius(M, C):
    return C * M * math.log(max(M, 2.0))


def check_truncation_lemma(A, B, M, C=100.0, find_min_constant=False):
    """``W2^2 <= 2 W~_{2,R}^2`` with ``R = C M ln(max(M, 2))``.

    A negative slack here means ``C`` is too small for the instance; it is
    reported as such. With ``find_min_constant`` the smallest working ``C``
    is located by bisection on ``R`` (the truncated cost is monotone in ``R``).
    """
    lhs = solve_ot(A, B, TransportCost.quadratic()).cost_value
    R = truncation_radius(M, C)
    rhs = 2 * solve_ot(A, B, TransportCost.truncated_quadratic(R)).cost_value if R > 0 else 0.0
    details = {"M": M, "C": C, "R": R}
    if rhs - lhs < -1e-9:
        details["note"] = "constant too small"
    if find_min_constant and M > 0:
        def ok(r):
            return r > 0 and 2 * solve_ot(A, B, TransportCost.truncated_quadratic(r)).cost_value >= lhs - 1e-12

        hi = float(cdist(A.points, B.points, "sqeuclidean").max()) + 1e-12
        lo = 0.0
        if lhs <= 1e-15:
            hi = 0.0
        else:
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                lo, hi = (lo, mid) if ok(mid) else (mid, hi)
        details["min_C"] = hi / (M * math.log(max(M, 2.0)))
    return _report(lhs, rhs, **details)


def coupled_log_cost(e, t, delta):
    """Trajectory-coupling estimate of ``E ln(1 + |X_t - Y_t|^2 / delta^2)``.

    The synchronous coupling is one admissible coupling, so this is an upper
    bound on ``D_delta(mu_t, nu_t)``.
    """
    k = int(np.argmin(np.abs(e.times - t)))
    z = e.paths_x[:, k, :] - e.paths_y[:, k, :]
    v = np.log1p(np.sum(z * z, axis=1) / delta ** 2)
    n = v.size
    return Estimate(float(v.mean()), float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0)


@dataclass
class FiniteTimeScenario:
    """Two processes started from ``X_0 = Y_0 ~ nu``.

    ``mu`` and ``nu`` are the invariant laws of the x- and y-process; ``g_norm``
    is ``||g||_{L^{2q}(mu)}`` for the regularity witness of the x-process.
    """

    pair: object
    mu: object
    nu: object
    p: float
    g_norm: Optional[float]
    n_traj: int = 4000
    dt: float = 1e-3
    seed: int = 0
    n_norm: int = 100_000
    threads: int = 1


def check_finite_time_bound(scenario, t, delta):
    """Compare the coupled log cost at time(s) ``t`` with the finite-time bound

    ``2t (10 ||dnu/dmu||_p ||g||^2_{2q} + ||a-b||_{L1(nu)}/delta + 2 ||sqrt sigma - sqrt tau||^2_{L2(nu)}/delta^2)``.

    Returns one report per requested time.
    """
    from .measures import relative_density_norm
    from .sde_sim import simulate_coupled
    from .stability_bounds import discrepancy_beta

    if scenario.g_norm is None:
        raise ValueError("a g-norm is required (lusin witness or analytic)")
    if delta <= 0:
        raise ValueError("delta must be positive")
    times = np.atleast_1d(np.asarray(t, dtype=float))
    dens = relative_density_norm(scenario.nu, scenario.mu, scenario.p)
    disc = discrepancy_beta(scenario.pair, scenario.nu, n=scenario.n_norm, seed=scenario.seed)
    rate = 10 * dens * scenario.g_norm ** 2 + disc.drift_l1 / delta + 2 * disc.diff_l2 ** 2 / delta ** 2
    ens = simulate_coupled(
        scenario.pair, scenario.nu, float(times.max()), scenario.dt, scenario.n_traj, scenario.seed,
        record_times=times, threads=scenario.threads,
    )
    reports = []
    for tt in times:
        est = coupled_log_cost(ens, tt, delta)
        reports.append(
            _report(est.value, 2 * tt * rate, lhs_se=est.se, t=float(tt), delta=delta, density_norm=dens,
                    g_norm=scenario.g_norm, drift_l1=disc.drift_l1, diff_l2=disc.diff_l2)
        )
    return reports if np.ndim(t) else reports[0]
