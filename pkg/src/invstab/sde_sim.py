"""Euler-Maruyama simulation of synchronously coupled diffusions.

Both processes of a :class:`DiffusionPair` are advanced with the same Gaussian
increment at every step::

    X <- X + a(X) dt + sqrt(2 dt) sqrt_tau(X) xi
    Y <- Y + b(Y) dt + sqrt(2 dt) sqrt_sigma(Y) xi

Diffusion fields return either ``(n, d, d)`` matrices or ``(n, d)`` arrays,
the latter read as diagonal matrices.
"""

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .measures import EmpiricalMeasure, Estimate, MeasureSpec, sample
from .streams import BLOCK_SIZE, generator

log = logging.getLogger(__name__)

__all__ = [
    "Diffusion",
    "DiffusionPair",
    "TrajectoryEnsemble",
    "ConvergenceProfile",
    "FitRefusedError",
    "spd_sqrt",
    "constant_field",
    "ou_process",
    "from_tau",
    "simulate",
    "simulate_coupled",
    "marginal_at",
    "estimate_convergence",
    "generator_residual",
]

BLOWUP_NORM = 1e8


class FitRefusedError(RuntimeError):
    """Convergence fit has too few usable points."""


def spd_sqrt(S):
    """Symmetric square root by eigendecomposition; accepts ``(d, d)`` or ``(n, d, d)``."""
    S = np.asarray(S, dtype=float)
    single = S.ndim == 2
    A = S[None] if single else S
    scale = np.maximum(1.0, np.abs(A).max(axis=(1, 2)))
    asym = np.abs(A - np.swapaxes(A, 1, 2)).max(axis=(1, 2))
    if np.any(asym > 1e-8 * scale):
        raise ValueError(f"matrix is not symmetric (asymmetry {asym.max():.3g})")
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    w, U = np.linalg.eigh(A)
    if np.any(w < -1e-10 * scale[:, None]):
        raise ValueError(f"matrix has negative eigenvalue {w.min():.3g}")
    w = np.clip(w, 0.0, None)
    R = np.einsum("nij,nj,nkj->nik", U, np.sqrt(w), U)
    R = 0.5 * (R + np.swapaxes(R, 1, 2))
    return R[0] if single else R


@dataclass(frozen=True)
class Diffusion:
    """One process ``dX = drift(X) dt + sqrt(2) sqrt_diffusion(X) dB``."""

    drift: Callable
    sqrt_diffusion: Callable
    dimension: int
    label: str = ""


@dataclass(frozen=True)
class DiffusionPair:
    drift_a: Callable
    drift_b: Callable
    sqrt_tau: Callable
    sqrt_sigma: Callable
    dimension: int

    @classmethod
    def from_halves(cls, x, y):
        if x.dimension != y.dimension:
            raise ValueError("processes live in different dimensions")
        return cls(x.drift, y.drift, x.sqrt_diffusion, y.sqrt_diffusion, x.dimension)

    @property
    def x(self):
        return Diffusion(self.drift_a, self.sqrt_tau, self.dimension, "x")

    @property
    def y(self):
        return Diffusion(self.drift_b, self.sqrt_sigma, self.dimension, "y")


def constant_field(value, dimension):
    """Constant diffusion field; scalar ``value`` means ``value * I``."""
    v = np.asarray(value, dtype=float)
    if v.ndim == 0:
        diag = np.full(dimension, float(v))
        return lambda x: np.broadcast_to(diag, (x.shape[0], dimension))
    if v.shape == (dimension,):
        return lambda x: np.broadcast_to(v, (x.shape[0], dimension))
    if v.shape != (dimension, dimension):
        raise ValueError("constant field has the wrong shape")
    return lambda x: np.broadcast_to(v, (x.shape[0], dimension, dimension))


def _neg(x):
    return -x


def ou_process(dimension=1, variance=1.0):
    """``dX = -X dt + sqrt(2 s) dB``; invariant law N(0, s I)."""
    return Diffusion(_neg, constant_field(math.sqrt(variance), dimension), dimension, f"ou(s={variance:g})")


def from_tau(tau, dimension):
    """Wrap a kernel field ``tau`` (returning matrices) as its square root field."""
    return lambda x: spd_sqrt(np.asarray(tau(x), dtype=float).reshape(x.shape[0], dimension, dimension))


def _apply(S, z):
    return S * z if S.ndim == 2 else np.einsum("nij,nj->ni", S, z)


@dataclass
class TrajectoryEnsemble:
    times: np.ndarray
    paths_x: np.ndarray
    paths_y: Optional[np.ndarray]
    seed: int
    dt: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_traj(self):
        return self.paths_x.shape[0]


def _init_draw(init, count, key):
    if isinstance(init, MeasureSpec):
        return init.draw(count, key)
    return np.asarray(init(count, key), dtype=float)


def _run_block(procs, inits, n, steps, record_idx, dt, seed, block, independent):
    d = procs[0].dimension
    key = (seed, 1, block)
    states = [_init_draw(init, n, key).reshape(n, d).copy() for init in inits]
    if len(states) == 2 and inits[1] is inits[0]:
        states[1] = states[0].copy()
    gens = [generator(seed, 7, block)]
    if independent and len(procs) == 2:
        gens.append(generator(seed, 8, block))
    rec = [np.empty((n, len(record_idx), d)) for _ in procs]
    alive = np.ones(n, dtype=bool)
    slot = {k: j for j, k in enumerate(record_idx)}
    root = math.sqrt(2.0 * dt)
    if 0 in slot:
        for r, s in zip(rec, states):
            r[:, slot[0]] = s
    for k in range(1, steps + 1):
        z = gens[0].standard_normal((n, d))
        zs = [z, gens[1].standard_normal((n, d)) if len(gens) == 2 else z]
        for i, (p, s) in enumerate(zip(procs, states)):
            s += np.asarray(p.drift(s), dtype=float) * dt + root * _apply(np.asarray(p.sqrt_diffusion(s), dtype=float), zs[i])
        for s in states:
            bad = ~np.isfinite(s).all(axis=1) | (np.abs(s).max(axis=1) > BLOWUP_NORM)
            if bad.any():
                alive &= ~bad
                s[bad] = 0.0
        if k in slot:
            for r, s in zip(rec, states):
                r[:, slot[k]] = s
    return rec, alive


def _simulate(procs, inits, T, dt, n_traj, seed, record_times, independent, threads):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if T < dt:
        raise ValueError("T must be at least dt")
    steps = int(round(T / dt))
    if record_times is None:
        record_idx = sorted(set(np.linspace(0, steps, min(steps, 100) + 1).round().astype(int).tolist()))
    else:
        record_idx = sorted(set(int(round(t / dt)) for t in np.atleast_1d(record_times)))
        if record_idx[0] < 0 or record_idx[-1] > steps:
            raise ValueError("record times outside [0, T]")
    blocks = [(b, min(BLOCK_SIZE, n_traj - b * BLOCK_SIZE)) for b in range((n_traj + BLOCK_SIZE - 1) // BLOCK_SIZE)]

    def work(bn):
        b, n = bn
        return _run_block(procs, inits, n, steps, record_idx, dt, seed, b, independent)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(bn) for bn in blocks]
    alive = np.concatenate([r[1] for r in results])
    paths = [np.concatenate([r[0][i] for r in results])[alive] for i in range(len(procs))]
    diagnostics = {"steps": steps, "n_requested": n_traj, "n_blown_up": int((~alive).sum())}
    if not alive.all():
        diagnostics["blowup"] = (
            f"{int((~alive).sum())} of {n_traj} trajectories exceeded |state| > {BLOWUP_NORM:g} and were dropped"
        )
        log.warning(diagnostics["blowup"])
    return TrajectoryEnsemble(
        times=np.array(record_idx) * dt,
        paths_x=paths[0],
        paths_y=paths[1] if len(paths) == 2 else None,
        seed=seed,
        dt=dt,
        diagnostics=diagnostics,
    )


def simulate_coupled(pair, init, T, dt, n_traj, seed, record_times=None, init_y=None,
                     independent_noise=False, threads=1):
    """Simulate both processes of ``pair`` from a common start (or ``init_y``).

    ``init`` is a :class:`MeasureSpec` or a ``(count, key) -> points`` callable.
    With ``init_y`` unset, ``X_0 = Y_0`` pathwise.
    """
    inits = [init, init if init_y is None else init_y]
    return _simulate([pair.x, pair.y], inits, T, dt, n_traj, seed, record_times, independent_noise, threads)


def simulate(process, init, T, dt, n_traj, seed, record_times=None, threads=1):
    """Single-process ensemble; ``paths_y`` is ``None``."""
    return _simulate([process], [init], T, dt, n_traj, seed, record_times, False, threads)


def marginal_at(e, t, which="x"):
    k = int(np.argmin(np.abs(e.times - t)))
    if abs(e.times[k] - t) > 1e-9 * max(1.0, abs(t)):
        warnings.warn(f"time {t} not recorded; using nearest recorded time {e.times[k]}", stacklevel=2)
    paths = e.paths_x if which == "x" else e.paths_y
    if paths is None:
        raise ValueError("ensemble has no y paths")
    return EmpiricalMeasure.uniform(paths[:, k, :])


@dataclass
class ConvergenceProfile:
    times: np.ndarray
    w2_estimates: np.ndarray
    fitted_kappa: float
    fitted_CH: float
    fit_residual: float
    noise_floor: float
    window: np.ndarray
    w2_initial: float


def estimate_convergence(process, target, init, times, n_traj=2000, dt=1e-3, seed=0, floor_factor=3.0, threads=1):
    """Fit ``W2(mu_t, mu) ~ C_H exp(-kappa t) W2(mu_0, mu)`` from simulation.

    Points whose W2 estimate does not exceed ``floor_factor`` times the
    two-sample noise floor of the target are left out of the log-linear fit.
    """
    from .transport import w2_empirical

    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size < 2:
        raise FitRefusedError("at least two times are needed to fit a rate")
    T = float(times.max())
    ens = simulate(process, init, max(T, dt), dt, n_traj, seed, record_times=times, threads=threads)
    w2 = []
    for k, t in enumerate(ens.times):
        ref = sample(target, ens.n_traj, (seed, 200, k))
        w2.append(w2_empirical(EmpiricalMeasure.uniform(ens.paths_x[:, k]), ref))
    w2 = np.array(w2)
    floor = w2_empirical(sample(target, ens.n_traj, (seed, 300)), sample(target, ens.n_traj, (seed, 301)))
    w0 = w2_empirical(sample(init, ens.n_traj, (seed, 302)), sample(target, ens.n_traj, (seed, 303)))
    window = w2 > floor_factor * floor
    if window.sum() < 2:
        raise FitRefusedError("W2 estimates are at the sampling noise floor at all but one time")
    t_fit, y_fit = ens.times[window], np.log(w2[window])
    slope, intercept = np.polyfit(t_fit, y_fit, 1)
    resid = y_fit - (slope * t_fit + intercept)
    return ConvergenceProfile(
        times=ens.times,
        w2_estimates=w2,
        fitted_kappa=float(-slope),
        fitted_CH=float(math.exp(intercept) / w0),
        fit_residual=float(np.sqrt(np.mean(resid ** 2))),
        noise_floor=float(floor),
        window=window,
        w2_initial=float(w0),
    )


def generator_residual(drift, tau, m, f, n=100_000, seed=0):
    """Monte Carlo ``E_m[Lf]`` for ``Lf = <a, grad f> + <tau, Hess f>_HS``.

    ``tau`` returns ``(n, d, d)`` matrices or ``(n, d)`` diagonals.
    """
    x = m.draw(n, (seed, 400))
    t = np.asarray(tau(x), dtype=float)
    H = f.hess(x)
    hs = np.einsum("nii,ni->n", H, t) if t.ndim == 2 else np.einsum("nij,nij->n", H, t)
    lf = np.einsum("ni,ni->n", np.asarray(drift(x), dtype=float), f.grad(x)) + hs
    return Estimate(float(lf.mean()), float(lf.std(ddof=1) / math.sqrt(n)))
