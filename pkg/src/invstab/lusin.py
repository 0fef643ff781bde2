"""Empirical Lusin-Lipschitz witnesses.

Given points ``x_i`` with weights ``w_i`` and one or more fields ``f``, find
``g >= 1`` with ``|f(x_i) - f(x_j)| <= (g_i + g_j) |x_i - x_j|`` for every pair
minimizing ``sum_i w_i g_i^p``. Matrix-valued fields are measured in the
Frobenius (Hilbert-Schmidt) norm; with several fields the pair constant is the
largest ratio over fields.

Only pairs with ``c_ij > 2`` can bind since ``g >= 1``. For ``p > 1`` the
program is solved by a primal-dual interior point method; the active set it
identifies is then polished by Newton's method on the KKT system and
corrected until the KKT conditions hold. ``p = 1`` is a linear program.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, sparse
from scipy.spatial.distance import pdist, squareform

log = logging.getLogger(__name__)

__all__ = ["LusinWitness", "estimate_lusin_witness", "pair_constants", "kkt_residual", "MAX_POINTS"]

MAX_POINTS = 2000


@dataclass
class LusinWitness:
    points: np.ndarray
    weights: np.ndarray
    g_values: np.ndarray
    p: float
    norm_p: float
    objective: float
    kkt_residual: float
    active_pairs: int
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    def max_violation(self, c):
        """Largest violation of the pair and floor constraints for constants ``c`` (n x n)."""
        s = self.g_values[:, None] + self.g_values[None, :]
        iu = np.triu_indices(self.g_values.size, 1)
        pair = float(np.max(c[iu] - s[iu], initial=0.0))
        return max(pair, float(np.max(1.0 - self.g_values, initial=0.0)), 0.0)


def _field_values(fields, x):
    vals = []
    for f in fields:
        v = np.asarray(f(x), dtype=float)
        vals.append(v.reshape(x.shape[0], -1))
    return vals


def _merge_duplicates(x, w):
    uniq, inv = np.unique(x, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    if uniq.shape[0] == x.shape[0]:
        return x, w, None
    wm = np.bincount(inv, weights=w, minlength=uniq.shape[0])
    return uniq, wm, inv


def pair_constants(points, fields):
    """Symmetric ``(n, n)`` matrix of ``max_f |f(x_i) - f(x_j)| / |x_i - x_j|`` (zero diagonal)."""
    x = np.asarray(points, dtype=float)
    dx = pdist(x)
    if np.any(dx == 0):
        raise ValueError("coincident points; merge duplicates first")
    c = np.zeros_like(dx)
    for v in _field_values(fields, x):
        c = np.maximum(c, pdist(v) / dx)
    return squareform(c)


def _g_of_s(s, w, p):
    return np.maximum(1.0, (s / (p * w)) ** (1.0 / (p - 1)))


def kkt_residual(g, lam, pairs, c, w, p):
    """Largest violation among feasibility, dual feasibility, complementarity
    and (weight-normalized) stationarity."""
    n = g.size
    i, j = pairs
    slack = g[i] + g[j] - c if i.size else np.zeros(0)
    s = np.bincount(i, lam, n) + np.bincount(j, lam, n) if i.size else np.zeros(n)
    grad = p * w * g ** (p - 1)
    mu = grad - s  # floor multiplier, must be >= 0 and vanish off the floor
    stat = np.where(g > 1 + 1e-12, np.abs(mu), np.maximum(-mu, 0.0)) / (p * w)
    parts = [
        np.max(-slack, initial=0.0),
        np.max(1.0 - g, initial=0.0),
        np.max(-lam, initial=0.0),
        np.max(np.abs(lam * slack) / (p * w[i]), initial=0.0) if i.size else 0.0,
        np.max(stat, initial=0.0),
    ]
    return float(max(parts))


def _newton_face(gk, lk, free, A, pairs, c, w, p):
    """Newton iterations on the KKT system of one face (active pairs ``A``, free variables ``free``)."""
    i, j = pairs
    n = gk.size
    nf, na = free.size, A.size
    pos = -np.ones(n, dtype=int)
    pos[free] = np.arange(nf)
    ends = np.concatenate([i[A], j[A]])
    ka = np.concatenate([np.arange(na), np.arange(na)])
    ok = pos[ends] >= 0
    prev = math.inf
    for _ in range(1 if p == 2 else 30):
        s = np.bincount(i[A], lk[A], n) + np.bincount(j[A], lk[A], n)
        res = np.concatenate([(p * w * gk ** (p - 1) - s)[free], gk[i[A]] + gk[j[A]] - c[A]])
        size = float(np.max(np.abs(res), initial=0.0))
        if size < 1e-15 or size >= prev:
            break
        prev = size
        diag = p * (p - 1) * w[free] * gk[free] ** (p - 2)
        if nf + na == 0:
            break
        # eliminate g through the diagonal Hessian: (B H^-1 B^T) dlam = B H^-1 r1 - r2
        B = sparse.csr_matrix((np.ones(ok.sum()), (ka[ok], pos[ends[ok]])), shape=(na, nf))
        r1, r2 = res[:nf], res[nf:]
        S = (B.multiply(1.0 / diag) @ B.T).toarray()
        rhs = B @ (r1 / diag) - r2
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", linalg.LinAlgWarning)
                dlam = linalg.solve(S, rhs, assume_a="pos", check_finite=False)
        except (np.linalg.LinAlgError, linalg.LinAlgWarning):
            # redundant active constraints: least-squares step
            dlam = linalg.lstsq(S, rhs, lapack_driver="gelsy", check_finite=False)[0]
        gk[free] += (B.T @ dlam - r1) / diag
        lk[A] += dlam
    return gk, lk


def _polish(g, lam, pairs, c, w, p, max_rounds=50):
    """Active-set refinement of a dual iterate; returns the best (residual, g, lam) seen."""
    n = g.size
    i, j = pairs
    active = (lam > 0) | (g[i] + g[j] <= c + 1e-9)
    floored = g <= 1 + 1e-9
    best = (kkt_residual(g, lam, pairs, c, w, p), g, lam)
    for _ in range(max_rounds):
        A = np.flatnonzero(active)
        free = np.flatnonzero(~floored)
        gk = np.where(floored, 1.0, g)
        lk = np.where(active, lam, 0.0)
        gk, lk = _newton_face(gk, lk, free, A, pairs, c, w, p)
        r = kkt_residual(gk, lk, pairs, c, w, p)
        if r < best[0]:
            best = (r, gk.copy(), lk.copy())
        if r < 1e-12:
            break
        slack = gk[i] + gk[j] - c
        mu = p * w * gk ** (p - 1) - (np.bincount(i, lk, n) + np.bincount(j, lk, n))
        drop = active & (lk < -1e-14)
        add = ~active & (slack < -1e-12)
        unfloor = floored & (mu < -1e-14 * p * w)
        refloor = ~floored & (gk < 1 - 1e-14)
        if not (drop.any() or add.any() or unfloor.any() or refloor.any()):
            break
        active = (active & ~drop) | add
        floored = (floored & ~unfloor) | refloor
        g, lam = np.maximum(gk, 1.0), np.maximum(lk, 0.0)
    return best


def _pair_sum(i, j, v, n):
    return np.bincount(i, v, n) + np.bincount(j, v, n)


def _solve_ipm(pairs, c, w, p, max_iter=200):
    """Primal-dual interior point (Mehrotra predictor-corrector) for
    ``min sum w g^p`` subject to ``g_i + g_j >= c_ij`` and ``g >= 1``.

    Starts strictly feasible, so primal feasibility is kept exactly along the
    iterates and ``g > 1`` throughout. Returns ``g``, the pair multipliers,
    the floor multipliers, the pair slacks and the iteration count.
    """
    i, j = pairs
    n, m = w.size, i.size
    g = np.full(n, max(1.0, c.max() / 2) + 1.0)
    sp, sf = g[i] + g[j] - c, g - 1.0
    zp, zf = np.full(m, float(np.mean(p * w))), np.full(n, float(np.mean(p * w)))
    ntot = m + n
    for it in range(max_iter):
        grad = p * w * g ** (p - 1)
        rd = grad - _pair_sum(i, j, zp, n) - zf
        mu = (sp @ zp + sf @ zf) / ntot
        if np.max(np.abs(rd) / (p * w)) < 1e-10 and mu < 1e-14 * float(np.min(p * w)):
            break
        log.debug("ipm %d mu %.3g rd %.3g", it, mu, np.max(np.abs(rd) / (p * w)))
        hess = p * (p - 1) * w * g ** (p - 2)
        dp, df = zp / sp, zf / sf
        M = sparse.coo_matrix(
            (np.concatenate([dp, dp, dp, dp, hess + df]),
             (np.concatenate([i, j, i, j, np.arange(n)]), np.concatenate([i, j, j, i, np.arange(n)]))),
            shape=(n, n),
        ).toarray()
        try:
            factor = linalg.cho_factor(M, check_finite=False)
        except np.linalg.LinAlgError:
            # barrier terms have outgrown double precision; the polish takes over
            break

        def direction(rc_p, rc_f):
            # primal residuals are zero, so t = S^-1 rc
            rhs = -rd - _pair_sum(i, j, rc_p / sp, n) - rc_f / sf
            dg = linalg.cho_solve(factor, rhs, check_finite=False)
            dsp, dsf = dg[i] + dg[j], dg
            return dg, dsp, dsf, (-rc_p - zp * dsp) / sp, (-rc_f - zf * dsf) / sf

        def max_step(v, dv):
            neg = dv < 0
            return float(np.min(-v[neg] / dv[neg], initial=np.inf))

        aff = direction(sp * zp, sf * zf)
        alpha = min(1.0, max_step(sp, aff[1]), max_step(sf, aff[2]), max_step(zp, aff[3]), max_step(zf, aff[4]))
        mu_aff = ((sp + alpha * aff[1]) @ (zp + alpha * aff[3]) + (sf + alpha * aff[2]) @ (zf + alpha * aff[4])) / ntot
        sigma = (mu_aff / mu) ** 3
        dg, dsp, dsf, dzp, dzf = direction(sp * zp + aff[1] * aff[3] - sigma * mu,
                                           sf * zf + aff[2] * aff[4] - sigma * mu)
        alpha = min(1.0, 0.995 * min(max_step(sp, dsp), max_step(sf, dsf), max_step(zp, dzp), max_step(zf, dzf)))
        g = g + alpha * dg
        # recompute slacks from g to keep primal feasibility exact
        sp, sf = np.maximum(g[i] + g[j] - c, sp * 1e-3), np.maximum(g - 1.0, sf * 1e-3)
        zp, zf = zp + alpha * dzp, zf + alpha * dzf
    return g, zp, zf, sp, sf, it + 1


def _solve_smooth(pairs, c, w, p):
    """Interior point solve, then snap to the identified active set and polish."""
    i, j = pairs
    g, zp, zf, sp, sf, iters = _solve_ipm(pairs, c, w, p)
    lam = np.where(zp > sp, zp, 0.0)
    g_snap = np.where(zf > sf, 1.0, g)
    r0 = kkt_residual(np.maximum(g, 1.0), zp, pairs, c, w, p)
    r, g_pol, lam_pol = _polish(g_snap, lam, pairs, c, w, p)
    if r0 < r:
        return np.maximum(g, 1.0), zp, iters
    return g_pol, lam_pol, iters


def _solve_lp(pairs, c, w):
    i, j = pairs
    n, m = w.size, i.size
    if m == 0:
        return np.ones(n), np.zeros(0)
    A = sparse.csr_matrix((-np.ones(2 * m), (np.r_[np.arange(m), np.arange(m)], np.r_[i, j])), shape=(m, n))
    res = optimize.linprog(w, A_ub=A, b_ub=-c, bounds=[(1, None)] * n, method="highs")
    if res.status != 0:
        raise RuntimeError(f"linear program failed: {res.message}")
    return res.x, np.maximum(-res.ineqlin.marginals, 0.0)


def estimate_lusin_witness(points, f, weights=None, p=2.0, tol=1e-6):
    """Optimal empirical witness ``g`` for the pairwise Lusin-Lipschitz condition.

    Parameters
    ----------
    points : (n, d) array
    f : callable or list of callables
        Fields evaluated on ``(n, d)`` arrays; vector or matrix valued.
    weights : (n,) array, optional
        Probability weights (uniform if omitted).
    p : float
        Exponent of the objective, ``p >= 1``.
    """
    x = np.asarray(points, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    n0 = x.shape[0]
    w = np.full(n0, 1.0 / n0) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n0,) or np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=1e-9):
        raise ValueError("weights must be a nonnegative vector summing to 1")
    if not p >= 1:
        raise ValueError("p must be at least 1")
    fields = list(f) if isinstance(f, (list, tuple)) else [f]
    xm, wm, inv = _merge_duplicates(x, w)
    if inv is not None:
        vals = _field_values(fields, x)
        for v in vals:
            ref = v[np.unique(inv, return_index=True)[1]]
            if not np.allclose(v, ref[inv]):
                raise ValueError("field takes different values at coincident points (unbounded ratio)")
    if xm.shape[0] > MAX_POINTS:
        raise ValueError(f"{xm.shape[0]} points exceed the O(n^2) limit of {MAX_POINTS}; subsample")
    keep = wm > 0
    xm, wm = xm[keep], wm[keep]
    n = xm.shape[0]
    C = pair_constants(xm, fields) if n > 1 else np.zeros((1, 1))
    iu, ju = np.triu_indices(n, 1)
    binding = C[iu, ju] > 2.0
    pairs = (iu[binding], ju[binding])
    c = C[iu, ju][binding]
    iterations = 0
    if c.size == 0:
        g, lam = np.ones(n), np.zeros(0)
    elif p == 1:
        g, lam = _solve_lp(pairs, c, wm)
    else:
        g, lam, iterations = _solve_smooth(pairs, c, wm, p)
    g = np.maximum(g, 1.0)
    r = kkt_residual(g, lam, pairs, c, wm, p) if p > 1 else _lp_kkt(g, lam, pairs, c, wm)
    objective = float(np.sum(wm * g ** p))
    converged = r < tol
    if not converged:
        log.warning("Lusin witness KKT residual %.3g above tolerance %.3g; returning best iterate", r, tol)
    return LusinWitness(
        points=xm, weights=wm, g_values=g, p=float(p), norm_p=objective ** (1.0 / p), objective=objective,
        kkt_residual=r, active_pairs=int(np.count_nonzero(lam > 0)), converged=converged,
        diagnostics={"candidate_pairs": int(c.size), "merged_points": int(n0 - xm.shape[0]), "iterations": iterations},
    )


def _lp_kkt(g, lam, pairs, c, w):
    i, j = pairs
    n = g.size
    slack = g[i] + g[j] - c
    s = np.bincount(i, lam, n) + np.bincount(j, lam, n)
    mu = w - s
    stat = np.where(g > 1 + 1e-9, np.abs(mu), np.maximum(-mu, 0.0)) / w
    return float(max(np.max(-slack, initial=0.0), np.max(np.abs(lam * slack) / w[i], initial=0.0),
                     np.max(stat, initial=0.0), np.max(1 - g, initial=0.0)))
