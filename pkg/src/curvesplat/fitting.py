"""Least-squares Bezier fitting with iterative parameter correction.

The fit alternates a linear least-squares solve for the control points with a
per-point closest-parameter update, starting from chord-length parameters.
The time-to-curve mapping is fitted as an explicit 1-D Bernstein function of
normalised time with pinned endpoints.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .bezier import BezierCurve, basis, basis_derivative

COND_LIMIT = 1e12
NEWTON_STEPS = 20
GOLDEN_EVALS = 50
PARAM_TOL = 1e-10


class FitError(ValueError):
    pass


class DegenerateInputError(FitError):
    pass


class IllConditionedError(FitError):
    pass


class InsufficientDataError(FitError):
    pass


class RepeatedParameterWarning(UserWarning):
    """Consecutive duplicate points produced repeated chord-length parameters."""


@dataclass
class FitResult:
    curve: BezierCurve
    params: np.ndarray
    residual: float
    iterations: int
    residual_history: list


def chord_length_params(points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < 2:
        raise DegenerateInputError("chord-length parameterisation needs at least two points")
    d = np.linalg.norm(np.diff(x, axis=0), axis=1)
    total = d.sum()
    if not total > 0.0:
        raise DegenerateInputError("all points identical: zero total chord length")
    if np.any(d == 0.0):
        warnings.warn("duplicate consecutive points give repeated parameters", RepeatedParameterWarning, stacklevel=2)
    t = np.concatenate([[0.0], np.cumsum(d) / total])
    t[-1] = 1.0
    return t


def _design_solve(design, x, t):
    q, r = np.linalg.qr(design)
    sv = np.linalg.svd(r, compute_uv=False)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if not cond <= COND_LIMIT:
        distinct = np.unique(np.round(t, 12))
        raise IllConditionedError(
            f"design matrix condition {cond:.3g} > {COND_LIMIT:g}: {len(distinct)} distinct parameter "
            f"value(s) in [{t.min():.6g}, {t.max():.6g}] for {design.shape[1]} unknowns"
        )
    return np.linalg.solve(r, q.T @ x)


def solve_control_points(points, params, degree: int) -> BezierCurve:
    """Control points minimising ||B P - X|| for fixed parameters (QR solve)."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    t = np.asarray(params, dtype=np.float64)
    if len(x) != len(t):
        raise FitError(f"{len(x)} points but {len(t)} parameters")
    if len(x) < degree + 1:
        raise InsufficientDataError(f"need at least {degree + 1} points for degree {degree}, got {len(x)}")
    return BezierCurve(_design_solve(basis(degree, t), x, t))


def _sq_dist(cps, x, t):
    diff = basis(len(cps) - 1, t) @ cps - x
    return np.einsum("...i,...i->...", diff, diff)


MONOMIAL_MAX_DEGREE = 6


def _to_monomial(n: int) -> np.ndarray:
    """Matrix M with basis(n, t) = [1, t, ..., t^n] @ M."""
    m = np.zeros((n + 1, n + 1))
    for i in range(n + 1):
        for k in range(i, n + 1):
            m[k, i] = math.comb(n, i) * math.comb(n - i, k - i) * (-1.0) ** (k - i)
    return m


_MONOMIAL = [_to_monomial(n) for n in range(MONOMIAL_MAX_DEGREE + 1)]


class _Jets:
    """Position and first two derivatives of a fixed curve.

    Low degrees use the monomial form (one power table, three small
    products); its roundoff on [0, 1] is a few ulps of the coefficient size.
    """

    def __init__(self, cps):
        n = len(cps) - 1
        self.n = n
        self.k = np.arange(n + 1)
        self.cps = cps
        if n <= MONOMIAL_MAX_DEGREE:
            a = _MONOMIAL[n] @ cps
            self.a0 = a
            self.a1 = self.k[1:, None] * a[1:]
            self.a2 = (self.k[2:] * (self.k[2:] - 1))[:, None] * a[2:]
        else:
            self.a0 = None
            self.c1 = n * np.diff(cps, axis=0)
            self.c2 = n * (n - 1) * np.diff(cps, 2, axis=0)

    def position(self, t):
        if self.a0 is not None:
            return (t[:, None] ** self.k) @ self.a0
        return basis(self.n, t) @ self.cps

    def all(self, t):
        n = self.n
        if self.a0 is not None:
            tp = t[:, None] ** self.k
            return tp @ self.a0, tp[:, :n] @ self.a1, tp[:, : n - 1] @ self.a2
        return basis(n, t) @ self.cps, basis(n - 1, t) @ self.c1, basis(n - 2, t) @ self.c2


def nearest_parameters(curve: BezierCurve, points, init, bracket: float = 0.25) -> np.ndarray:
    """Vectorised closest-parameter search, one independent problem per point.

    Newton iteration on the derivative of the squared distance, seeded at
    ``init``, with step halving when a step increases the distance.  Points
    where Newton cannot make progress fall back to golden-section search on
    ``[init - bracket, init + bracket]`` (clipped to [0, 1]).  The result
    never has a larger distance than the seed.
    """
    cps = curve.control_points
    jets = _Jets(cps)
    x = np.asarray(points, dtype=np.float64).reshape(-1, curve.dim)
    t0 = np.clip(np.asarray(init, dtype=np.float64).reshape(-1), 0.0, 1.0)

    def sq(tt):
        diff = jets.position(tt) - x
        return np.einsum("ij,ij->i", diff, diff)

    d0 = sq(t0)
    t = t0.copy()
    dist = d0.copy()
    live = np.ones(len(t), dtype=bool)
    failed = np.zeros(len(t), dtype=bool)
    for _ in range(NEWTON_STEPS):
        pos, d1, d2 = jets.all(t)
        diff = pos - x
        g = np.einsum("ij,ij->i", diff, d1)
        h = np.einsum("ij,ij->i", d1, d1) + np.einsum("ij,ij->i", diff, d2)
        bad = ~(h > 0.0)
        step = np.where(bad | ~live, 0.0, g / np.where(bad, 1.0, h))
        t_new = np.clip(t - step, 0.0, 1.0)
        d_new = sq(t_new)
        ref = dist * (1.0 + 1e-12) + 1e-300
        worse = d_new > ref
        for _ in range(4):
            if not worse.any():
                break
            step = np.where(worse, 0.5 * step, step)
            t_new = np.where(worse, np.clip(t - step, 0.0, 1.0), t_new)
            d_new = np.where(worse, sq(t_new), d_new)
            worse = d_new > ref
        stuck = live & (bad | worse)
        failed |= stuck
        ok = live & ~stuck
        moved = np.abs(t_new - t)
        t = np.where(ok, t_new, t)
        dist = np.where(ok, d_new, dist)
        live = ok & (moved >= PARAM_TOL)
        if not live.any():
            break
    failed |= live  # Newton budget exhausted

    if failed.any():
        idx = np.flatnonzero(failed)
        lo = np.clip(t[idx] - bracket, 0.0, 1.0)
        hi = np.clip(t[idx] + bracket, 0.0, 1.0)
        cand = _golden(cps, x[idx], lo, hi)
        d_cand = _sq_dist(cps, x[idx], cand)
        better = d_cand < dist[idx]
        t[idx[better]] = cand[better]
        dist[idx[better]] = d_cand[better]

    keep = dist > d0
    t[keep] = t0[keep]
    return t


def _golden(cps, x, lo, hi):
    ratio = (np.sqrt(5.0) - 1.0) / 2.0
    a = hi - ratio * (hi - lo)
    b = lo + ratio * (hi - lo)
    fa = _sq_dist(cps, x, a)
    fb = _sq_dist(cps, x, b)
    for _ in range(GOLDEN_EVALS - 2):
        left = fa < fb
        hi = np.where(left, b, hi)
        lo = np.where(left, lo, a)
        new_a = hi - ratio * (hi - lo)
        new_b = lo + ratio * (hi - lo)
        a_next = np.where(left, new_a, b)
        b_next = np.where(left, a, new_b)
        f_eval = _sq_dist(cps, x, np.where(left, new_a, new_b))
        fa, fb = np.where(left, f_eval, fb), np.where(left, fa, f_eval)
        a, b = a_next, b_next
    best = 0.5 * (lo + hi)
    # bracket ends can be the true minimisers of a clamped projection
    cand = np.stack([best, lo, hi])
    dist = np.stack([_sq_dist(cps, x, c) for c in cand])
    return cand[np.argmin(dist, axis=0), np.arange(len(x))]


def nearest_parameter(curve: BezierCurve, point, init: float) -> float:
    return float(nearest_parameters(curve, np.asarray(point, dtype=np.float64)[None], [init])[0])


def _rms(curve: BezierCurve, x, t) -> float:
    return float(np.sqrt(np.mean(_sq_dist(curve.control_points, x, t))))


def _polish(x, cps, t, max_nfev=400):
    """Joint least squares over control points and interior parameters.

    Endpoint parameters stay pinned at 0 and 1; interior parameters are
    bounded to [0, 1].
    """
    m, d = x.shape
    n = len(cps) - 1
    k = (n + 1) * d
    rows = np.arange(1, m - 1)

    def unpack(z):
        return z[:k].reshape(n + 1, d), np.concatenate([[0.0], z[k:], [1.0]])

    def residuals(z):
        p, tt = unpack(z)
        return (basis(n, tt) @ p - x).ravel()

    def jacobian(z):
        p, tt = unpack(z)
        jac = np.zeros((m, d, k + m - 2))
        b = basis(n, tt)
        for j in range(d):
            jac[:, j, j:k:d] = b
        jac[rows, :, k + rows - 1] = (basis_derivative(n, tt) @ p)[1:-1]
        return jac.reshape(m * d, -1)

    z0 = np.concatenate([cps.ravel(), np.clip(t[1:-1], 0.0, 1.0)])
    lower = np.concatenate([np.full(k, -np.inf), np.zeros(m - 2)])
    upper = np.concatenate([np.full(k, np.inf), np.ones(m - 2)])
    sol = optimize.least_squares(
        residuals, z0, jac=jacobian, bounds=(lower, upper), method="trf",
        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev,
    )
    p, tt = unpack(sol.x)
    return BezierCurve(p), tt


def _uniform_params(m: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, m)


def _centripetal_params(x: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.linalg.norm(np.diff(x, axis=0), axis=1))
    t = np.concatenate([[0.0], np.cumsum(d)]) / d.sum()
    t[-1] = 1.0
    return t


def fit(points, degree: int = 3, tol: float = 1e-9, max_iter: int = 50, polish: bool = True) -> FitResult:
    """Alternate control-point solves and parameter updates until the RMS
    residual improves by less than ``tol`` or ``max_iter`` is reached.

    The first and last points are pinned to t = 0 and t = 1.  With ``polish``
    a final joint solve over control points and parameters is attempted (from
    the alternation result and from the chord-length start) and kept only if
    it lowers the residual, so ``residual_history`` stays non-increasing.
    """
    if tol <= 0:
        raise FitError("tol must be positive")
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < degree + 1:
        raise InsufficientDataError(f"need at least {degree + 1} points for degree {degree}, got {len(x)}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RepeatedParameterWarning)
        t = chord_length_params(x)
    chord = t
    curve = solve_control_points(x, t, degree)
    chord_curve = curve
    res = _rms(curve, x, t)
    history = [res]
    iterations = 0
    while iterations < max_iter and res > 0.0:
        t_next = nearest_parameters(curve, x, t)
        t_next[0], t_next[-1] = 0.0, 1.0
        curve_next = solve_control_points(x, t_next, degree)
        res_next = _rms(curve_next, x, t_next)
        iterations += 1
        if res_next > res:
            # roundoff in the solve; keep the better iterate
            break
        curve, t, improvement, res = curve_next, t_next, res - res_next, res_next
        history.append(res)
        if improvement < tol:
            break
    if polish and len(x) > degree + 1 and res > 1e-14:
        # uniform and centripetal starts rescue hairpin shapes where chord
        # length misleads
        starts = ((curve, t), (chord_curve, chord), None, None)
        fallbacks = iter((_uniform_params(len(x)), _centripetal_params(x)))
        for start in starts:
            if start is None:
                s_t = next(fallbacks)
                start = (solve_control_points(x, s_t, degree), s_t)
            start_curve, start_t = start
            cand_curve, cand_t = _polish(x, start_curve.control_points, start_t)
            cand_res = _rms(cand_curve, x, cand_t)
            if cand_res < res:
                curve, t, res = cand_curve, cand_t, cand_res
                history.append(res)
            if res < 1e-12:
                break
    return FitResult(curve=curve, params=t, residual=res, iterations=iterations, residual_history=history)


def fit_time_mapping(timestamps, params, degree: int = 3) -> BezierCurve:
    """Fit t = f(tau_hat) with tau_hat the timestamps normalised to [0, 1].

    The first and last control values are pinned to ``params[0]`` and
    ``params[-1]``; interior values come from least squares.
    """
    tau = np.asarray(timestamps, dtype=np.float64).reshape(-1)
    t = np.asarray(params, dtype=np.float64).reshape(-1)
    if len(tau) != len(t):
        raise FitError("timestamps and params differ in length")
    if len(tau) < degree + 1:
        raise InsufficientDataError(f"need at least {degree + 1} samples for degree {degree}, got {len(tau)}")
    if np.any(np.diff(tau) <= 0):
        raise FitError("timestamps must be strictly increasing")
    tau_hat = (tau - tau[0]) / (tau[-1] - tau[0])
    values = np.empty(degree + 1)
    values[0], values[-1] = t[0], t[-1]
    if degree > 1:
        b = basis(degree, tau_hat)
        rhs = t - b[:, 0] * values[0] - b[:, -1] * values[-1]
        interior = b[:, 1:-1]
        q, r = np.linalg.qr(interior)
        values[1:-1] = np.linalg.solve(r, q.T @ rhs)
    return BezierCurve(values[:, None])


def is_monotone(time_curve: BezierCurve, samples: int = 257) -> bool:
    """True when the 1-D mapping is non-decreasing on [0, 1]."""
    s = np.linspace(0.0, 1.0, samples)
    return bool(np.all(basis_derivative(time_curve.degree, s) @ time_curve.control_points[:, 0] >= -1e-12))
