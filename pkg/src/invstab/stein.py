"""Stein kernels: the moment-map kernel, a closed-form 1D oracle, identity checks.

A Stein kernel of a centered measure ``mu`` is a matrix field ``tau`` with
``E[<grad f(X), X>] = E[<Hess f(X), tau(X)>_HS]`` for smooth ``f``. The
moment-map kernel is ``tau(y) = phi''((phi')^{-1}(y))``. In one dimension
the kernel is unique and equals ``(1/rho(y)) int_y^inf t rho(t) dt``, which
gives an independent check on the moment-map construction.
"""

import math
import threading
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline, PchipInterpolator

from .measures import as_points
from .moment_map import MomentMap1D, MomentMapProduct, _quantile, monge_ampere_residual, pushforward_residual
from .sde_sim import Diffusion, spd_sqrt

__all__ = [
    "SteinKernelField",
    "KernelRangeError",
    "SteinResidual",
    "kernel_from_moment_map",
    "kernel_closed_form_1d",
    "constant_kernel",
    "stein_identity_residual",
    "stein_sde",
    "CLIP_FLAG_FRACTION",
]

CLIP_FLAG_FRACTION = 1e-3


class KernelRangeError(ValueError):
    pass


@dataclass(eq=False)
class SteinKernelField:
    """Kernel field on ``R^d``.

    Diagonal kernels are stored as one callable per coordinate with its
    attainable range; a constant kernel may be a full matrix.
    """

    dimension: int
    provenance: str
    domain_measure: object = None
    factors: Optional[list] = None
    ranges: Optional[list] = None
    matrix: Optional[np.ndarray] = None
    _clips: list = field(default_factory=lambda: [0, 0], repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def is_diagonal(self):
        return self.matrix is None or np.count_nonzero(self.matrix - np.diag(np.diag(self.matrix))) == 0

    def _clipped(self, y, clip):
        y = as_points(y, self.dimension)
        if self.ranges is None:
            return y, np.zeros(y.shape[0], dtype=bool)
        lo = np.array([r[0] for r in self.ranges])
        hi = np.array([r[1] for r in self.ranges])
        out = ((y < lo) | (y > hi)).any(axis=1)
        if out.any() and not clip:
            bad = y[out][0]
            raise KernelRangeError(
                f"kernel evaluated at {bad.tolist()} outside the attainable range "
                f"{[tuple(map(float, r)) for r in self.ranges]}"
            )
        return np.clip(y, lo, hi), out

    def diagonal(self, y, clip=False):
        """``(n, d)`` diagonal of the kernel at each point."""
        if not self.is_diagonal:
            raise ValueError("kernel is not diagonal")
        y, out = self._clipped(y, clip)
        if clip:
            with self._lock:
                self._clips[0] += int(out.sum())
                self._clips[1] += int(out.size)
        if self.factors is None:
            return np.broadcast_to(np.diag(self.matrix), y.shape).copy()
        return np.column_stack([f(y[:, k]) for k, f in enumerate(self.factors)])

    def evaluate(self, y, clip=False):
        """``(n, d, d)`` kernel matrices."""
        if not self.is_diagonal:
            y = as_points(y, self.dimension)
            return np.broadcast_to(self.matrix, (y.shape[0],) + self.matrix.shape).copy()
        diag = self.diagonal(y, clip)
        out = np.zeros(diag.shape + (self.dimension,))
        idx = np.arange(self.dimension)
        out[:, idx, idx] = diag
        return out

    def sqrt_evaluate(self, y, clip=False):
        if self.is_diagonal:
            diag = np.sqrt(self.diagonal(y, clip))
            out = np.zeros(diag.shape + (self.dimension,))
            idx = np.arange(self.dimension)
            out[:, idx, idx] = diag
            return out
        return spd_sqrt(self.evaluate(y))

    def clip_fraction(self, y):
        _, out = self._clipped(y, clip=True)
        return float(out.mean()) if out.size else 0.0

    def clip_stats(self):
        """Clipped and total evaluations since construction (clip mode only)."""
        with self._lock:
            return tuple(self._clips)

    def lower_bound(self, n=2001):
        """Smallest eigenvalue over a grid spanning the kernel range."""
        if not self.is_diagonal:
            return float(np.linalg.eigvalsh(self.matrix).min())
        if self.factors is None:
            return float(np.diag(self.matrix).min())
        return float(min(f(np.linspace(lo, hi, n)).min() for f, (lo, hi) in zip(self.factors, self.ranges)))


def _factor_kernel(mm):
    x, y = mm.phi_prime, mm.phi_second
    if np.any(np.diff(x) <= 0):
        raise ValueError("phi' is not strictly increasing; the map is not convex")
    return PchipInterpolator(x, y, extrapolate=False), (float(x[0]), float(x[-1]))


def kernel_from_moment_map(mm, residual_tol=1e-6):
    """``tau(y) = phi''((phi')^{-1}(y))``, diagonal for product maps."""
    maps = mm.factors if isinstance(mm, MomentMapProduct) else [mm]
    for f in maps:
        if not isinstance(f, MomentMap1D):
            raise TypeError("expected a solved moment map")
        res = max(monge_ampere_residual(f), pushforward_residual(f))
        if res > residual_tol:
            raise ValueError(f"moment map residual {res:.3g} exceeds {residual_tol:g}")
    parts = [_factor_kernel(f) for f in maps]
    domain = maps[0].target if len(maps) == 1 else None
    return SteinKernelField(
        dimension=len(maps),
        provenance="moment_map",
        domain_measure=domain,
        factors=[p[0] for p in parts],
        ranges=[p[1] for p in parts],
    )


def kernel_closed_form_1d(m, n_nodes=1025, tail_mass=1e-10):
    """Tabulated ``tau(y) = (1/rho(y)) int_y^inf t rho(t) dt`` by adaptive quadrature.

    For ``y < 0`` the equivalent form ``-(1/rho(y)) int_-inf^y t rho(t) dt`` is
    used so that both tails are computed without cancellation.
    """
    if m.dimension != 1 or m.is_atom:
        raise ValueError("closed-form kernel is defined for 1D measures with a density")
    lo_w, hi_w = _quantile(m, 1e-16), _quantile(m, 1 - 1e-16)
    mean = integrate.quad(lambda t: t * float(m.pdf(t)[0]), lo_w, hi_w, epsabs=1e-13, limit=200)[0]
    if abs(mean) > 1e-8 * max(1.0, float(m.scale[0])):
        raise ValueError(f"measure is not centered (mean {mean:.3g})")
    a, b = _quantile(m, tail_mass), _quantile(m, 1 - tail_mass)
    ys = np.linspace(a, b, n_nodes)

    def lr(t):
        return float(m.log_pdf(np.array([[t]]))[0])

    step0 = float(m.scale[0])

    def tail_end(y, ly, sign):
        # walk outwards until the density has dropped by e^-50 relative to rho(y)
        t, step = y, step0
        while lr(t) > ly - 50.0:
            t += sign * step
            step *= 1.5
        return t

    vals = np.empty(n_nodes)
    for i, y in enumerate(ys):
        ly = lr(y)
        g = lambda t: t * math.exp(lr(t) - ly)  # noqa: E731
        if y >= 0:
            vals[i] = integrate.quad(g, y, max(hi_w, tail_end(y, ly, 1)), epsabs=1e-14, epsrel=1e-12, limit=200)[0]
        else:
            vals[i] = -integrate.quad(g, min(lo_w, tail_end(y, ly, -1)), y, epsabs=1e-14, epsrel=1e-12,
                                      limit=200)[0]
    spline = CubicSpline(ys, vals, extrapolate=False)
    return SteinKernelField(
        dimension=1, provenance="closed_form_1d", domain_measure=m, factors=[spline], ranges=[(a, b)]
    )


def constant_kernel(matrix, measure=None):
    """Constant kernel, e.g. ``tau = Sigma`` for a centered Gaussian ``N(0, Sigma)``."""
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T) or np.linalg.eigvalsh(M).min() <= 0:
        raise ValueError("constant kernel must be symmetric positive definite")
    return SteinKernelField(dimension=M.shape[0], provenance="constant", domain_measure=measure, matrix=M)


class SteinResidual(NamedTuple):
    value: float
    se: float
    clip_fraction: float
    flagged: bool


def _integrand(k, f, x, clip=True):
    t = k.evaluate(x, clip=clip)
    return np.einsum("ni,ni->n", f.grad(x), x) - np.einsum("nij,nij->n", f.hess(x), t)


def stein_identity_residual(m, k, f, n=100_000, seed=0, method="mc"):
    """``E[<grad f, X>] - E[<Hess f, tau>_HS]`` with its standard error.

    Samples outside the kernel range are clipped to it and counted; more
    than 0.1% clipped flags the result. ``method="quadrature"`` integrates
    over the kernel range in 1D (SE reported as 0).
    """
    if k.dimension != m.dimension:
        raise ValueError("kernel and measure dimensions differ")
    if method == "quadrature":
        if m.dimension != 1:
            raise ValueError("quadrature variant is 1D only")
        if k.ranges is not None:
            lo, hi = k.ranges[0]
        else:
            lo, hi = _quantile(m, 1e-16), _quantile(m, 1 - 1e-16)
        g = lambda t: float(_integrand(k, f, np.array([[t]]))[0] * m.pdf(t)[0])  # noqa: E731
        with warnings.catch_warnings():
            # roundoff warnings at these tolerances are expected and harmless
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val = integrate.quad(g, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=400)[0]
        outside = float(m.cdf(lo) + 1 - m.cdf(hi)) if m.cdf is not None else 0.0
        return SteinResidual(float(val), 0.0, outside, outside > CLIP_FLAG_FRACTION)
    if method != "mc":
        raise ValueError(f"unknown method {method!r}")
    x = m.draw(n, (seed, 500))
    frac = k.clip_fraction(x)
    v = _integrand(k, f, x)
    return SteinResidual(float(v.mean()), float(v.std(ddof=1) / math.sqrt(n)), frac, frac > CLIP_FLAG_FRACTION)


def stein_sde(k, label=None):
    """``dX = -X dt + sqrt(2 tau(X)) dB``; out-of-range states are clipped and counted."""
    if not k.lower_bound() > 0:
        raise ValueError("kernel is not bounded away from zero; the diffusion would degenerate")

    def drift(x):
        return -x

    if k.is_diagonal:
        def sqrt_field(x):
            return np.sqrt(k.diagonal(x, clip=True))
    else:
        root = spd_sqrt(k.matrix)

        def sqrt_field(x):
            return np.broadcast_to(root, (x.shape[0],) + root.shape)

    return Diffusion(drift, sqrt_field, k.dimension, label or f"stein({k.provenance})")
