"""Analytic and empirical probability measures.

A :class:`MeasureSpec` carries an unnormalized log-density with its gradient
(and optionally Hessian), a seeded sampler and the computed log partition
constant. Quadrature is used for anything integral-valued in one and two
dimensions; higher dimensions fall back to Monte Carlo with a standard error.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import integrate, optimize, special
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from .streams import generator

log = logging.getLogger(__name__)

__all__ = [
    "Estimate",
    "InvalidMeasureError",
    "MeasureSpec",
    "EmpiricalMeasure",
    "make_gaussian",
    "make_gibbs_1d",
    "make_point_mass",
    "expectation",
    "total_mass",
    "second_moment",
    "relative_density_norm",
    "subexp_parameter",
    "sample",
    "as_points",
]

# Log-density drop (from the peak) at which quadrature windows are cut.
_TAIL_DROP = 45.0
_INVERSE_CDF_NODES = 4096


class InvalidMeasureError(ValueError):
    """Raised for measures that cannot be built or integrated."""


class Estimate(NamedTuple):
    value: float
    se: float = 0.0


def as_points(x, dimension):
    """Coerce ``x`` to an ``(n, dimension)`` float array."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if dimension == 1 else x.reshape(1, -1)
    if x.shape[1] != dimension:
        raise ValueError(f"expected points of dimension {dimension}, got shape {x.shape}")
    return x


def _uniforms(gen, shape):
    # strictly inside (0, 1) so inverse CDFs stay finite
    return gen.random(shape) + 2.0 ** -54


def _key(seed):
    return tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)


@dataclass(frozen=True, eq=False)
class MeasureSpec:
    """Probability measure on R^d given by an unnormalized log-density.

    ``normalization`` is the log of the partition constant, so
    ``log_density(x) - normalization`` is the normalized log-density.
    ``support`` is ``None`` for the full space or a tuple of ``(lo, hi)``
    intervals. A Dirac mass is represented by ``atom`` with no density.
    """

    dimension: int
    log_density: Optional[Callable]
    log_density_gradient: Optional[Callable]
    sampler: Callable
    normalization: float
    support: Optional[tuple] = None
    convexity_alpha: Optional[float] = None
    log_density_hessian: Optional[Callable] = None
    center: np.ndarray = field(default_factory=lambda: np.zeros(1))
    scale: np.ndarray = field(default_factory=lambda: np.ones(1))
    cdf: Optional[Callable] = None
    atom: Optional[np.ndarray] = None
    name: str = ""
    params: dict = field(default_factory=dict)

    @property
    def is_atom(self):
        return self.atom is not None

    def log_pdf(self, x):
        if self.is_atom:
            raise InvalidMeasureError(f"{self.name or 'point mass'} has no density")
        x = as_points(x, self.dimension)
        return np.asarray(self.log_density(x), dtype=float) - self.normalization

    def pdf(self, x):
        return np.exp(self.log_pdf(x))

    def draw(self, count, seed):
        """Raw ``(count, d)`` draws, keyed by ``seed`` (int or tuple)."""
        return np.asarray(self.sampler(int(count), seed), dtype=float).reshape(int(count), self.dimension)


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] != w.shape[0]:
            raise ValueError("points and weights disagree in length")
        if not np.all(np.isfinite(pts)):
            raise ValueError("empirical measure has non-finite coordinates")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points):
        pts = np.asarray(points, dtype=float)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def dimension(self):
        return self.points.shape[1]


# --------------------------------------------------------------------------
# constructors


def make_gaussian(mean, covariance, name="gaussian"):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    d = mean.shape[0]
    cov = np.asarray(covariance, dtype=float)
    cov = cov.reshape(1, 1) if cov.ndim == 0 else cov
    if cov.shape != (d, d):
        raise InvalidMeasureError(f"covariance shape {cov.shape} does not match mean of length {d}")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise InvalidMeasureError("covariance is not symmetric")
    evals = np.linalg.eigvalsh(cov)
    if evals.min() <= 0:
        raise InvalidMeasureError(f"covariance is not positive definite (eigenvalue {evals.min():g})")
    chol = np.linalg.cholesky(cov)
    precision = np.linalg.inv(cov)
    precision = 0.5 * (precision + precision.T)
    _, logdet = np.linalg.slogdet(2 * np.pi * cov)

    def log_density(x):
        z = as_points(x, d) - mean
        return -0.5 * np.einsum("ni,ij,nj->n", z, precision, z)

    def gradient(x):
        return -(as_points(x, d) - mean) @ precision

    def hessian(x):
        n = as_points(x, d).shape[0]
        return np.broadcast_to(-precision, (n, d, d)).copy()

    def sampler(count, seed):
        z = special.ndtri(_uniforms(generator(*_key(seed)), (count, d)))
        return mean + z @ chol.T

    alpha = None
    s = cov[0, 0]
    if np.allclose(cov, s * np.eye(d), rtol=0, atol=1e-14 * s):
        alpha = min(1.0 / s, s)

    cdf = None
    if d == 1:
        sd = math.sqrt(cov[0, 0])
        cdf = lambda y: special.ndtr((np.asarray(y, dtype=float) - mean[0]) / sd)  # noqa: E731

    return MeasureSpec(
        dimension=d,
        log_density=log_density,
        log_density_gradient=gradient,
        log_density_hessian=hessian,
        sampler=sampler,
        normalization=0.5 * logdet,
        convexity_alpha=alpha,
        center=mean.copy(),
        scale=np.sqrt(np.diag(cov)),
        cdf=cdf,
        name=name,
        params={"kind": "gaussian", "mean": mean.tolist(), "cov": cov.tolist()},
    )


def make_point_mass(location, name="point_mass"):
    loc = np.atleast_1d(np.asarray(location, dtype=float))
    d = loc.shape[0]

    def sampler(count, seed):
        return np.broadcast_to(loc, (count, d)).copy()

    return MeasureSpec(
        dimension=d,
        log_density=None,
        log_density_gradient=None,
        sampler=sampler,
        normalization=0.0,
        center=loc.copy(),
        scale=np.zeros(d),
        atom=loc.copy(),
        name=name,
        params={"kind": "point", "location": loc.tolist()},
    )


def _vectorized(f):
    def g(x):
        x = np.asarray(x, dtype=float)
        out = np.asarray(f(x), dtype=float)
        if out.shape != x.shape:
            out = np.broadcast_to(out, x.shape).astype(float)
        return out

    return g


def _quad(fun, lo, hi, points=(), epsabs=1e-14, epsrel=1e-12):
    """Adaptive Gauss-Kronrod on [lo, hi], split at interior break points."""
    cuts = [lo] + sorted(p for p in points if lo < p < hi) + [hi]
    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        for a, b in zip(cuts[:-1], cuts[1:]):
            try:
                val, _ = integrate.quad(fun, a, b, epsabs=epsabs, epsrel=epsrel, limit=500)
            except integrate.IntegrationWarning as exc:
                raise InvalidMeasureError(f"quadrature did not converge on [{a:g}, {b:g}]: {exc}") from exc
            total += val
    if not math.isfinite(total):
        raise InvalidMeasureError("quadrature diverged")
    return total


def make_gibbs_1d(V, dV, d2V, alpha=None, name="gibbs1d", params=None):
    """Measure with density proportional to ``exp(-V)`` on the real line.

    The measure is recentred by a coordinate shift so that its mean is 0:
    the returned log-density is ``-V(x + m)`` with ``m`` the mean under
    ``exp(-V)``. Sampling is by inverse CDF on a cached 4096-node table.
    """
    V, dV, d2V = _vectorized(V), _vectorized(dV), _vectorized(d2V)

    # mode: root of V' on an expanding bracket
    lo, hi = -1.0, 1.0
    while dV(np.array(lo)) >= 0:
        lo *= 2
        if lo < -1e6:
            raise InvalidMeasureError(f"{name}: exp(-V) is not integrable (V' never negative)")
    while dV(np.array(hi)) <= 0:
        hi *= 2
        if hi > 1e6:
            raise InvalidMeasureError(f"{name}: exp(-V) is not integrable (V' never positive)")
    mode = optimize.brentq(lambda t: float(dV(np.array(t))), lo, hi, xtol=1e-14)
    curv = float(d2V(np.array(mode)))
    if not curv > 0:
        raise InvalidMeasureError(f"{name}: V'' <= 0 at the critical point; exp(-V) is not integrable")
    v0 = float(V(np.array(mode)))

    def radius(sign):
        r = max(1.0 / math.sqrt(curv), 1e-3)
        while float(V(np.array(mode + sign * r))) - v0 < _TAIL_DROP:
            r *= 1.25
            if r > 1e6:
                raise InvalidMeasureError(f"{name}: exp(-V) is not integrable")
        return r

    a, b = mode - radius(-1), mode + radius(+1)
    rel = lambda t: math.exp(-(float(V(np.array(t))) - v0))  # noqa: E731
    z_rel = _quad(rel, a, b, points=(mode,))
    mean = _quad(lambda t: t * rel(t), a, b, points=(mode, 0.0)) / z_rel
    var = _quad(lambda t: (t - mean) ** 2 * rel(t), a, b, points=(mode, mean)) / z_rel
    normalization = -v0 + math.log(z_rel)

    grid = np.linspace(a, b, _INVERSE_CDF_NODES)
    d2 = d2V(grid)
    if np.any(d2 <= 0):
        raise InvalidMeasureError(f"{name}: V'' is not strictly positive on the quadrature window")
    # refine extremes of V'' off-grid
    lo_v2, hi_v2 = float(d2.min()), float(d2.max())
    for idx, sgn in ((int(np.argmin(d2)), 1.0), (int(np.argmax(d2)), -1.0)):
        l_, r_ = grid[max(idx - 1, 0)], grid[min(idx + 1, grid.size - 1)]
        res = optimize.minimize_scalar(
            lambda t: sgn * float(d2V(np.array(t))), bounds=(l_, r_), method="bounded", options={"xatol": 1e-12}
        )
        val = sgn * res.fun
        lo_v2, hi_v2 = min(lo_v2, val), max(hi_v2, val)
    alpha_est = min(lo_v2, 1.0 / hi_v2, 1.0)
    if alpha is not None:
        if not (lo_v2 >= alpha - 1e-6 and hi_v2 <= 1.0 / alpha + 1e-6):
            raise InvalidMeasureError(
                f"{name}: V'' range [{lo_v2:.6g}, {hi_v2:.6g}] violates alpha={alpha:g} bounds"
            )
        alpha_used = float(alpha)
    else:
        alpha_used = float(alpha_est)

    # CDF table in recentred coordinates
    xs = grid - mean
    dens = np.exp(-(V(grid) - v0) - math.log(z_rel))
    cdf_nodes = integrate.cumulative_simpson(dens, x=xs, initial=0.0)
    if np.any(np.diff(cdf_nodes) < -1e-15):
        raise InvalidMeasureError(f"{name}: CDF table is not monotone")
    cdf_nodes = np.maximum.accumulate(cdf_nodes) / cdf_nodes[-1]
    cdf_spline = CubicHermiteSpline(xs, cdf_nodes, dens)
    keep = np.concatenate([[True], np.diff(cdf_nodes) > 0])
    inv = PchipInterpolator(cdf_nodes[keep], xs[keep])
    u_lo, u_hi = cdf_nodes[keep][0], cdf_nodes[keep][-1]

    def cdf(y):
        y = np.asarray(y, dtype=float)
        out = cdf_spline(np.clip(y, xs[0], xs[-1]))
        return np.clip(out, 0.0, 1.0)

    def log_density(x):
        return -V(as_points(x, 1)[:, 0] + mean)

    def gradient(x):
        return (-dV(as_points(x, 1)[:, 0] + mean)).reshape(-1, 1)

    def hessian(x):
        return (-d2V(as_points(x, 1)[:, 0] + mean)).reshape(-1, 1, 1)

    def sampler(count, seed):
        u = _uniforms(generator(*_key(seed)), (count, 1))
        return inv(np.clip(u, u_lo, u_hi))

    return MeasureSpec(
        dimension=1,
        log_density=log_density,
        log_density_gradient=gradient,
        log_density_hessian=hessian,
        sampler=sampler,
        normalization=normalization,
        convexity_alpha=alpha_used,
        center=np.zeros(1),
        scale=np.array([math.sqrt(var)]),
        cdf=cdf,
        name=name,
        params=dict(params or {"kind": "gibbs1d"}, shift=mean, alpha=alpha_used),
    )


# --------------------------------------------------------------------------
# quadrature


def _window(m, drop=_TAIL_DROP):
    """Per-axis integration bounds outside of which the density is negligible."""
    d = m.dimension
    c = np.asarray(m.center, dtype=float)
    peak = float(m.log_pdf(c[None, :])[0])
    bounds = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = 1.0
        s = float(m.scale[k]) if m.scale[k] > 0 else 1.0
        sides = []
        for sgn in (-1.0, 1.0):
            r = s
            while peak - float(m.log_pdf((c + sgn * r * e)[None, :])[0]) < drop:
                r *= 1.25
                if r > 1e6 * s:
                    raise InvalidMeasureError(f"{m.name}: density does not decay")
            sides.append(c[k] + sgn * r)
        bounds.append(tuple(sides))
    if m.support is not None:
        bounds = [(max(a, sa), min(b, sb)) for (a, b), (sa, sb) in zip(bounds, m.support)]
    return bounds


def expectation(m, f, epsabs=1e-14, epsrel=1e-12, points=()):
    """Quadrature of ``E_m[f(X)]`` for d <= 2; ``f`` maps (n, d) points to (n,).

    ``points`` lists extra 1D break points (kinks of ``f``).
    """
    if m.is_atom:
        return float(np.asarray(f(m.atom[None, :]), dtype=float)[0])
    d = m.dimension
    win = _window(m)
    if d == 1:
        g = lambda t: float(f(np.array([[t]]))[0] * m.pdf(np.array([[t]]))[0])  # noqa: E731
        return _quad(g, win[0][0], win[0][1], points=(float(m.center[0]), 0.0, *points), epsabs=epsabs, epsrel=epsrel)
    if d == 2:
        def g(t2, t1):
            p = np.array([[t1, t2]])
            return float(f(p)[0] * m.pdf(p)[0])

        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, _ = integrate.nquad(
                    g, [win[1], win[0]], opts={"epsabs": 1e-11, "epsrel": 1e-10, "limit": 200}
                )
            except integrate.IntegrationWarning as exc:
                raise InvalidMeasureError(f"2D quadrature did not converge: {exc}") from exc
        return val
    raise ValueError("quadrature is only available for d <= 2; use Monte Carlo")


def total_mass(m):
    return expectation(m, lambda x: np.ones(x.shape[0]))


def _mc(m, f, n, seed):
    x = m.draw(n, (seed, 101))
    v = np.asarray(f(x), dtype=float)
    return Estimate(float(v.mean()), float(v.std(ddof=1) / math.sqrt(n)))


def second_moment(m, n=100_000, seed=0):
    """``E|X|^2``; quadrature for d <= 2 (se = 0), Monte Carlo otherwise."""
    f = lambda x: np.sum(x * x, axis=1)  # noqa: E731
    if m.is_atom:
        return Estimate(float(np.sum(m.atom ** 2)))
    if m.dimension <= 2:
        return Estimate(expectation(m, f))
    return _mc(m, f, n, seed)


def _ratio_window(nu, mu):
    wn, wm = _window(nu), _window(mu)
    return [(min(a[0], b[0]), max(a[1], b[1])) for a, b in zip(wn, wm)]


def relative_density_norm(nu, mu, p, grid_points=4001):
    """``|| d nu / d mu ||_{L^p(mu)}``; ``math.inf`` when the ratio is unbounded.

    Finite ``p`` uses quadrature of ``nu^p mu^(1-p)``; ``p = inf`` takes the
    supremum of the density ratio on a grid, refined locally in 1D.
    """
    if nu.dimension != mu.dimension:
        raise ValueError("dimension mismatch")
    if nu.is_atom or mu.is_atom:
        raise InvalidMeasureError("density ratio needs two absolutely continuous measures")
    if nu.dimension > 2:
        raise ValueError("relative_density_norm supports d <= 2")
    p = float(p)
    if p < 1:
        raise ValueError("p must be >= 1")
    d = nu.dimension
    win = _ratio_window(nu, mu)
    # widen so divergence shows up at the edges
    win = [(c0 - 0.5 * (c1 - c0), c1 + 0.5 * (c1 - c0)) for c0, c1 in win]
    axes = [np.linspace(a, b, grid_points if d == 1 else 401) for a, b in win]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)

    if math.isinf(p):
        lr = (nu.log_pdf(mesh) - mu.log_pdf(mesh)).reshape([len(a) for a in axes])
        k = np.unravel_index(int(np.argmax(lr)), lr.shape)
        on_edge = [i for i, (kk, a) in enumerate(zip(k, axes)) if kk in (0, len(a) - 1)]
        for i in on_edge:
            inner = list(k)
            inner[i] = 1 if k[i] == 0 else k[i] - 1
            if lr[k] > lr[tuple(inner)] + 1e-12:
                log.warning("density ratio %s/%s is unbounded", nu.name, mu.name)
                return math.inf
        best = float(lr[k])
        x0 = np.array([a[kk] for a, kk in zip(axes, k)])
        f = lambda t: -float(nu.log_pdf(np.atleast_1d(t)[None, :])[0] - mu.log_pdf(np.atleast_1d(t)[None, :])[0])  # noqa: E731
        if d == 1 and not on_edge:
            i = k[0]
            res = optimize.minimize_scalar(
                f, bounds=(axes[0][i - 1], axes[0][i + 1]), method="bounded", options={"xatol": 1e-12}
            )
        else:
            res = optimize.minimize(f, x0, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-15})
        return float(math.exp(max(-res.fun, best)))

    log_integrand = lambda x: p * nu.log_pdf(x) + (1 - p) * mu.log_pdf(x)  # noqa: E731
    li = log_integrand(mesh).reshape([len(a) for a in axes])
    peak = li.max()
    edges = [li[0], li[-1]] if d == 1 else [li[0], li[-1], li[:, 0], li[:, -1]]
    if max(np.max(e) for e in edges) > peak - 30.0:
        log.warning("L^%g norm of %s/%s diverges", p, nu.name, mu.name)
        return math.inf
    f = lambda x: np.exp(log_integrand(x) - peak)  # noqa: E731
    if d == 1:
        center = float(mesh[int(np.argmax(li)), 0])
        g = lambda t: float(f(np.array([[t]]))[0])  # noqa: E731
        val = _quad(g, win[0][0], win[0][1], points=(center, float(nu.center[0]), float(mu.center[0])))
    else:
        def g(t2, t1):
            return float(f(np.array([[t1, t2]]))[0])

        val, _ = integrate.nquad(g, [win[1], win[0]], opts={"epsabs": 1e-12, "epsrel": 1e-10, "limit": 200})
    return float(math.exp((math.log(val) + peak) / p))


def subexp_parameter(m, k_max=8, n=100_000, seed=0):
    """Sub-exponential parameter ``max_{2<=k<=k_max} E[|X|^k]^(1/k) / k``."""
    if k_max < 2:
        raise ValueError("k_max must be at least 2")
    ks = range(2, int(k_max) + 1)
    if m.is_atom:
        r = float(np.linalg.norm(m.atom))
        return max(r / k for k in ks)
    if m.dimension == 1:
        moments = [expectation(m, lambda x, k=k: np.abs(x[:, 0]) ** k) for k in ks]
    else:
        r = np.linalg.norm(m.draw(n, (seed, 102)), axis=1)
        moments = [float(np.mean(r ** k)) for k in ks]
    if not all(math.isfinite(v) for v in moments):
        raise InvalidMeasureError("divergent absolute moment")
    return max(v ** (1.0 / k) / k for v, k in zip(moments, ks))


def sample(m, n, seed):
    """``n`` i.i.d. draws with uniform weights; deterministic in ``seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return EmpiricalMeasure.uniform(m.draw(n, seed))
