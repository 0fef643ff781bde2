"""Discrepancies, the stability bounds' right-hand sides, and scenario verification.

Conventions: a :class:`~invstab.sde_sim.DiffusionPair` carries the square
roots ``sqrt_tau`` / ``sqrt_sigma`` of the diffusion matrices, with the
processes ``dX = a dt + sqrt(2 tau) dB``. Second moments ``m_2`` are root
second moments, ``m_2(mu) = (E_mu |x|^2)^(1/2)``.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .measures import (
    EmpiricalMeasure,
    Estimate,
    MeasureSpec,
    expectation,
    relative_density_norm,
    second_moment,
)
from .sde_sim import DiffusionPair, estimate_convergence, simulate_coupled
from .transport import TransportCost, check_truncation_lemma, solve_ot, truncation_radius, w2_empirical

log = logging.getLogger(__name__)

__all__ = [
    "DiscrepancyReport",
    "BoundReport",
    "Scenario",
    "DomainError",
    "discrepancy_beta",
    "theorem1_rhs",
    "theorem2_rhs",
    "theorem3_rhs",
    "verify_scenario",
    "verdict",
]

RADIAL_FLAG = "dimension condition d>c unverifiable (c unquantified)"


class DomainError(ValueError):
    """A bound was evaluated outside the domain of its formula."""


@dataclass
class DiscrepancyReport:
    drift_l1: float
    drift_l2: float
    diff_l2: float
    estimation_se: dict = field(default_factory=dict)

    @property
    def beta_thm1(self):
        return self.drift_l1 + self.diff_l2

    @property
    def beta_thm2(self):
        return self.drift_l2 + self.diff_l2


def _as_matrix(v, n, d):
    v = np.asarray(v, dtype=float)
    if v.ndim == 2:
        out = np.zeros((n, d, d))
        idx = np.arange(d)
        out[:, idx, idx] = v
        return out
    return v.reshape(n, d, d)


def _pointwise(pair, x):
    n, d = x.shape
    da = np.asarray(pair.drift_a(x), dtype=float) - np.asarray(pair.drift_b(x), dtype=float)
    ds = _as_matrix(pair.sqrt_sigma(x), n, d) - _as_matrix(pair.sqrt_tau(x), n, d)
    return np.linalg.norm(da.reshape(n, d), axis=1), np.sqrt(np.sum(ds * ds, axis=(1, 2)))


def discrepancy_beta(pair, nu, n=100_000, seed=0):
    """``||a-b||_{L^1(nu)}``, ``||a-b||_{L^2(nu)}`` and ``||sqrt sigma - sqrt tau||_{L^2(nu)}``.

    One-dimensional measures with a density use quadrature (SE 0); otherwise
    Monte Carlo from ``nu`` with standard errors (delta method for the roots).
    """
    if nu.is_atom:
        a, s = _pointwise(pair, nu.atom[None, :])
        return DiscrepancyReport(float(a[0]), float(a[0]), float(s[0]))
    if nu.dimension == 1:
        # tabulated kernels are only C^1, so ask for 1e-10 rather than round-off
        def q(fn):
            return expectation(nu, fn, epsabs=1e-12, epsrel=1e-10)

        l1 = q(lambda x: _pointwise(pair, x)[0])
        l2 = math.sqrt(max(q(lambda x: _pointwise(pair, x)[0] ** 2), 0.0))
        hs = math.sqrt(max(q(lambda x: _pointwise(pair, x)[1] ** 2), 0.0))
        return DiscrepancyReport(l1, l2, hs, {"drift_l1": 0.0, "drift_l2": 0.0, "diff_l2": 0.0})
    x = nu.draw(n, (seed, 600))
    a, s = _pointwise(pair, x)

    def root_se(v):
        m = float(np.mean(v * v))
        se = float(np.std(v * v, ddof=1) / math.sqrt(n))
        r = math.sqrt(m)
        return r, (se / (2 * r) if r > 0 else 0.0)

    l2, l2_se = root_se(a)
    hs, hs_se = root_se(s)
    return DiscrepancyReport(
        float(a.mean()), l2, hs,
        {"drift_l1": float(a.std(ddof=1) / math.sqrt(n)), "drift_l2": l2_se, "diff_l2": hs_se},
    )


def theorem1_rhs(R, beta, g_norm_2q, density_norm_p, kappa, C_H, m2_mu, m2_nu):
    """Right-hand side bounding the squared truncated distance ``W~^2_{2,R}(nu, mu)``.

    ``100 C_H^2 R ||g||^2 ||dnu/dmu|| (lnln(1+R/beta) + ln(m2_mu + m2_nu) + kappa R) / (kappa ln(1+R/beta))``.
    At ``beta = 0`` the limit, 0, is returned.
    """
    if not R > 1:
        raise DomainError(f"R = {R} but the bound holds for any R > 1 only")
    if beta < 0:
        raise DomainError("beta must be nonnegative")
    for name, v in (("g_norm_2q", g_norm_2q), ("density_norm_p", density_norm_p)):
        if not (0 <= v < math.inf):
            raise DomainError(f"{name} = {v} must be finite and nonnegative")
    if not (kappa > 0 and C_H >= 1):
        raise DomainError("need kappa > 0 and C_H >= 1")
    if not m2_mu + m2_nu > 0:
        raise DomainError("ln(m2(mu) + m2(nu)) undefined: both second moments vanish")
    if beta == 0:
        return 0.0
    L = math.log1p(R / beta)
    if L < 1 - 1e-12:
        raise DomainError(
            f"ln(ln(1 + R/beta)) needs R/beta >= e - 1 (R/beta = {R / beta:.6g})"
        )
    lnln = math.log(max(L, 1.0))
    bracket = lnln + math.log(m2_mu + m2_nu) + kappa * R
    return 100 * C_H ** 2 * R * g_norm_2q ** 2 * density_norm_p * bracket / (kappa * L)


def theorem2_rhs(L, kappa, C_H, beta):
    """``15 C_H^{(4L^2+1)/(2 kappa)} beta (L/kappa + 1)``, bounding ``W_2(nu, mu)``."""
    if L < 0 or not kappa > 0 or C_H < 1 or beta < 0:
        raise DomainError("need L >= 0, kappa > 0, C_H >= 1, beta >= 0")
    return 15 * C_H ** ((4 * L * L + 1) / (2 * kappa)) * beta * (L / kappa + 1)


def theorem3_rhs(alpha, d, M, beta, density_norm, variant="general", L=None, C=1.0):
    """Right-hand sides bounding ``W_2^2(mu, nu)`` for Stein-kernel processes.

    ``general`` uses ``||dnu/dmu||_inf`` and ``radial`` the ``L^2(mu)`` norm
    (both carry the unquantified constant ``C``); ``lipschitz`` needs ``L``.
    Returns ``(value, flags)``.
    """
    if not 0 < alpha <= 1:
        raise DomainError("alpha must lie in (0, 1]")
    if beta < 0:
        raise DomainError("beta must be nonnegative")
    flags = []
    if variant == "lipschitz":
        if L is None:
            raise DomainError("lipschitz variant needs the Lipschitz constant L")
        return 100 * alpha ** (-(4 * L * L + 1)) * (2 * L + 1) * beta, flags
    if variant not in ("general", "radial"):
        raise ValueError(f"unknown variant {variant!r}")
    if not M > 1:
        raise DomainError(f"M = {M} <= 1 makes ln(M) <= 0")
    if not (0 <= density_norm < math.inf):
        raise DomainError("density norm must be finite")
    if beta == 0:
        return 0.0, flags
    lg = math.log1p(M / beta)
    bracket = math.log(lg) + M * math.log(M)
    if variant == "general":
        pre = C * alpha ** -6 * d ** 3
    else:
        pre = C * alpha ** -20 * d ** 3.5
        flags.append(RADIAL_FLAG)
    return pre * M * math.log(M) * density_norm * bracket / lg, flags


def verdict(slack, se):
    if abs(slack) < 3 * se:
        return "inconclusive"
    return "holds" if slack >= 0 else "violated"


@dataclass
class BoundReport:
    theorem: int
    lhs_estimate: Estimate
    rhs_value: float
    inputs: dict
    provenance: dict
    flags: list = field(default_factory=list)

    @property
    def slack(self):
        return self.rhs_value - self.lhs_estimate.value

    @property
    def verdict(self):
        return verdict(self.slack, self.lhs_estimate.se)

    def to_dict(self):
        return {
            "theorem": self.theorem,
            "inputs": self.inputs,
            "lhs": {"value": self.lhs_estimate.value, "se": self.lhs_estimate.se},
            "rhs": self.rhs_value,
            "slack": self.slack,
            "verdict": self.verdict,
            "flags": list(self.flags),
            "provenance": self.provenance,
        }


@dataclass
class Scenario:
    """Everything needed to check one bound.

    ``pair.x`` is the process with invariant law ``mu`` and ``pair.y`` the one
    with invariant law ``nu``.
    """

    theorem: int
    pair: DiffusionPair
    mu: MeasureSpec
    nu: MeasureSpec
    name: str = ""
    seed: int = 0
    n_samples: int = 2000
    batches: int = 10
    T: float = 1.0
    dt: float = 1e-3
    threads: int = 1
    R: Optional[float] = None
    p: float = math.inf
    kappa_source: str = "analytic"
    kappa: Optional[float] = None
    C_H: Optional[float] = None
    g_source: str = "lusin"
    g_norm: Optional[float] = None
    lusin_points: int = 500
    L: Optional[float] = None
    alpha: Optional[float] = None
    variant: str = "general"
    C: float = 1.0
    truncation_C: float = 100.0
    discrepancy_n: int = 100_000


def _batched(cost_fn, X, Y, batches):
    full = cost_fn(X, Y)
    n = X.shape[0]
    k = max(2, int(batches))
    size = n // k
    vals = [cost_fn(X[b * size:(b + 1) * size], Y[b * size:(b + 1) * size]) for b in range(k)]
    return Estimate(float(full), float(np.std(vals, ddof=1) / math.sqrt(k)))


def _equilibrium_samples(s):
    """Run both processes from their own invariant laws with common random numbers."""
    ens = simulate_coupled(
        s.pair, s.mu, s.T, s.dt, s.n_samples, s.seed, record_times=[s.T], init_y=s.nu, threads=s.threads
    )
    dropped = s.n_samples - ens.paths_x.shape[0]
    return ens.paths_x[:, -1, :], ens.paths_y[:, -1, :], {"simulated_T": s.T, "dt": s.dt, "dropped": dropped}


def _kappa(s):
    if s.kappa_source == "analytic":
        if s.kappa is None or s.C_H is None:
            raise ValueError("analytic kappa source needs kappa and C_H")
        return s.kappa, s.C_H, {}
    if s.kappa_source == "stein":
        alpha = s.alpha if s.alpha is not None else s.mu.convexity_alpha
        if alpha is None:
            raise ValueError("stein kappa source needs the convexity parameter alpha of mu")
        return 0.5, alpha ** -2, {"alpha": alpha}
    if s.kappa_source == "fitted":
        from .measures import make_point_mass

        start = make_point_mass(np.full(s.mu.dimension, 3.0 * float(np.max(s.mu.scale))))
        prof = estimate_convergence(s.pair.x, s.mu, start, np.linspace(0, 4, 17), n_traj=2000, dt=s.dt,
                                    seed=s.seed, threads=s.threads)
        # contraction constants are at least 1 by definition
        return prof.fitted_kappa, max(prof.fitted_CH, 1.0), {
            "fitted_CH_raw": prof.fitted_CH, "fit_residual": prof.fit_residual, "noise_floor": prof.noise_floor,
        }
    raise ValueError(f"unknown kappa source {s.kappa_source!r}")


def _g_norm(s, q2):
    if s.g_source == "analytic":
        if s.g_norm is None:
            raise ValueError("analytic g source needs g_norm")
        return s.g_norm, {}
    if s.g_source != "lusin":
        raise ValueError(f"unknown g source {s.g_source!r}")
    from .lusin import estimate_lusin_witness

    if not math.isfinite(q2):
        raise ValueError("p = 1 needs ||g||_inf, which an empirical witness cannot certify")
    pts = s.mu.draw(s.lusin_points, (s.seed, 700))
    wit = estimate_lusin_witness(pts, [s.pair.drift_a, s.pair.sqrt_tau], p=q2)
    return wit.norm_p, {"lusin_kkt_residual": wit.kkt_residual, "lusin_active_pairs": wit.active_pairs,
                        "lusin_points": s.lusin_points, "lusin_p": q2}


def verify_scenario(s):
    """Estimate the left-hand side, evaluate the bound and return a :class:`BoundReport`."""
    X, Y, sim_info = _equilibrium_samples(s)
    d = s.mu.dimension
    m2_mu = math.sqrt(second_moment(s.mu).value)
    m2_nu = math.sqrt(second_moment(s.nu).value)
    inputs = {"d": d, "m2_mu": m2_mu, "m2_nu": m2_nu, "n_samples": s.n_samples, **sim_info}
    prov = {"constants": {}}
    flags = []
    if s.theorem == 1:
        if s.R is None:
            raise ValueError("theorem 1 needs R")
        if not s.R > 1:
            raise DomainError(f"R = {s.R} but the bound holds for any R > 1 only")
        p = float(s.p)
        q = 1.0 if math.isinf(p) else (math.inf if p == 1 else p / (p - 1))
        disc = discrepancy_beta(s.pair, s.nu, s.discrepancy_n, s.seed)
        kappa, C_H, kinfo = _kappa(s)
        g, ginfo = _g_norm(s, 2 * q)
        dens = relative_density_norm(s.nu, s.mu, p)
        rhs = theorem1_rhs(s.R, disc.beta_thm1, g, dens, kappa, C_H, m2_mu, m2_nu)
        cost = TransportCost.truncated_quadratic(s.R)
        lhs = _batched(lambda a, b: solve_ot(EmpiricalMeasure.uniform(a), EmpiricalMeasure.uniform(b), cost)
                       .cost_value, X, Y, s.batches)
        inputs.update(R=s.R, beta=disc.beta_thm1, drift_l1=disc.drift_l1, diff_l2=disc.diff_l2, kappa=kappa,
                      C_H=C_H, p=p, q=q, g_norm=g, density_norm=dens, **kinfo, **ginfo)
        prov.update(kappa_source=s.kappa_source, g_source=s.g_source, lhs="truncated W2 squared")
    elif s.theorem == 2:
        if s.L is None:
            raise ValueError("theorem 2 needs the Lipschitz constant L")
        disc = discrepancy_beta(s.pair, s.nu, s.discrepancy_n, s.seed)
        kappa, C_H, kinfo = _kappa(s)
        rhs = theorem2_rhs(s.L, kappa, C_H, disc.beta_thm2)
        lhs = _batched(lambda a, b: w2_empirical(EmpiricalMeasure.uniform(a), EmpiricalMeasure.uniform(b)),
                       X, Y, s.batches)
        inputs.update(beta=disc.beta_thm2, drift_l2=disc.drift_l2, diff_l2=disc.diff_l2, L=s.L, kappa=kappa,
                      C_H=C_H, **kinfo)
        prov.update(kappa_source=s.kappa_source, g_source="lipschitz", lhs="W2")
    elif s.theorem == 3:
        alpha = s.alpha if s.alpha is not None else s.mu.convexity_alpha
        if alpha is None:
            raise ValueError("theorem 3 needs alpha")
        # the discrepancy is measured under mu here
        disc = discrepancy_beta(s.pair, s.mu, s.discrepancy_n, s.seed)
        M = max(m2_mu ** 2, m2_nu ** 2)
        dens = None
        if s.variant == "general":
            dens = relative_density_norm(s.nu, s.mu, math.inf)
        elif s.variant == "radial":
            dens = relative_density_norm(s.nu, s.mu, 2.0)
        rhs, flags = theorem3_rhs(alpha, d, M, disc.diff_l2, dens if dens is not None else 0.0, s.variant,
                                  L=s.L, C=s.C)
        lhs = _batched(lambda a, b: w2_empirical(EmpiricalMeasure.uniform(a), EmpiricalMeasure.uniform(b)) ** 2,
                       X, Y, s.batches)
        k = min(X.shape[0], 1000)
        bridge = check_truncation_lemma(EmpiricalMeasure.uniform(X[:k]), EmpiricalMeasure.uniform(Y[:k]), M,
                                        C=s.truncation_C)
        inputs.update(alpha=alpha, M=M, beta=disc.diff_l2, density_norm=dens, variant=s.variant, L=s.L,
                      kappa=0.5, C_H=alpha ** -2, truncation_R=truncation_radius(M, s.truncation_C),
                      truncation_slack=bridge.slack)
        prov.update(kappa_source="stein", g_source="stein kernel (constant absorbed in C)", lhs="W2 squared")
        if s.variant != "lipschitz":
            prov["constants"]["C"] = s.C
            flags.append("C is unquantified; value taken from configuration")
        prov["constants"]["truncation_C"] = s.truncation_C
        if s.g_source == "lusin":
            # empirical witness for sqrt(tau_mu); reports the constant implied by ||g||_2 <= C d^{3/2} / alpha
            from .lusin import estimate_lusin_witness

            pts = s.mu.draw(s.lusin_points, (s.seed, 700))
            wit = estimate_lusin_witness(pts, [s.pair.sqrt_tau], p=2.0)
            inputs.update(lusin_g_norm=wit.norm_p, lusin_kkt_residual=wit.kkt_residual,
                          lusin_implied_C=wit.norm_p * alpha / d ** 1.5)
    else:
        raise ValueError(f"unknown theorem {s.theorem}")
    inputs["seed"] = s.seed
    return BoundReport(s.theorem, lhs, float(rhs), inputs, prov, flags)


def scenario_dict(s):
    """Serializable summary of a scenario's scalar settings."""
    out = {}
    for k, v in asdict(s).items():
        if isinstance(v, (int, float, str)) or v is None:
            out[k] = v
    return out
