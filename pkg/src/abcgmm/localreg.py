"""Kernel-weighted local polynomial mean and quantile regression at the origin.

Both fits minimize a weighted criterion over monomials of the regressors,
with total weight w_s = omega_s * kappa(y_s / h).  The intercept (coefficient
of the all-zero multi-index) is the estimate of the conditional mean or
quantile at zero.

The quantile problem min_b sum_s w_s rho_tau(eta_s - b' basis(y_s)) is convex
but nonsmooth.  Three routes are used, all conforming to the same
objective-gap contract:

* degree 0: exact weighted quantile of the responses (closed form);
* small active sets: exact linear-programming reformulation (HiGHS);
* large active sets: iteratively reweighted least squares on a smoothed
  check function, with the smoothing parameter driven down geometrically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import InsufficientSupport, SingularDesign, SolverNotConverged
from .polybasis import basis_matrix

__all__ = [
    "RegressionSample",
    "LocalFit",
    "check_function",
    "local_poly_mean",
    "local_poly_quantile",
]

# Gram matrices above this condition estimate raise SingularDesign unless an
# explicit ridge is supplied.
CONDITION_THRESHOLD = 1e12

# Active sets up to this size go through the exact LP solver.
_LP_CUTOFF = 600

_IRLS_LEVELS = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
_IRLS_INNER = 60


@dataclass
class RegressionSample:
    """Regressors y_s (local to zero), responses eta_s and importance weights."""

    points: np.ndarray
    responses: np.ndarray
    extra_weights: np.ndarray = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.responses = np.asarray(self.responses, dtype=float).reshape(-1)
        n = self.points.shape[0]
        if self.extra_weights is None:
            self.extra_weights = np.ones(n)
        else:
            self.extra_weights = np.asarray(self.extra_weights, dtype=float).reshape(-1)
        if not (n == self.responses.size == self.extra_weights.size):
            raise ValueError("points, responses and weights must have equal length")
        if n < 1:
            raise ValueError("need at least one draw")
        if np.any(self.extra_weights < 0):
            raise ValueError("importance weights must be nonnegative")
        if not np.any(self.extra_weights > 0):
            raise ValueError("at least one importance weight must be positive")

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def dimension(self):
        return self.points.shape[1]

    def norms(self):
        return np.sqrt(np.einsum("ij,ij->i", self.points, self.points))


@dataclass
class LocalFit:
    """Coefficients of one local fit plus support diagnostics."""

    coefficients: np.ndarray
    intercept: float
    effective_weight: float
    active_count: int
    condition_estimate: float
    objective: float = None


def check_function(x, tau):
    """Quantile check loss rho_tau(x) = (tau - 1(x <= 0)) * x."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    out = (tau - (x <= 0)) * x
    return float(out) if out.ndim == 0 else out


def _total_weights(sample, kernel, h):
    if not h > 0:
        raise InsufficientSupport(f"bandwidth must be positive, got {h}", bandwidth=h)
    if kernel.dimension != sample.dimension:
        raise ValueError("kernel dimension does not match regressor dimension")
    return sample.extra_weights * kernel.weights(sample.points / h)


def _active_design(sample, kernel, h, basis):
    w = _total_weights(sample, kernel, h)
    active = w > 0
    count = int(active.sum())
    if count < len(basis):
        raise InsufficientSupport(
            f"{count} draws with positive weight but {len(basis)} coefficients to fit",
            bandwidth=h,
        )
    X = basis_matrix(sample.points[active], basis)
    return X, sample.responses[active], w[active], float(w.sum()), count


def local_poly_mean(sample, kernel, h, basis, ridge=0.0):
    """Weighted least-squares local polynomial fit; intercept estimates the
    conditional mean at the origin.

    Solved through an SVD of the weight-scaled design, which is also the
    source of the Gram condition estimate.  No silent regularization: an
    ill-conditioned design raises SingularDesign unless ``ridge`` > 0.
    """
    X, y, w, wsum, count = _active_design(sample, kernel, h, basis)
    sw = np.sqrt(w)
    U, s, Vt = np.linalg.svd(X * sw[:, None], full_matrices=False)
    cond = float("inf") if s[-1] == 0 else float((s[0] / s[-1]) ** 2)
    if ridge == 0.0 and cond > CONDITION_THRESHOLD:
        raise SingularDesign(
            f"weighted Gram condition estimate {cond:.3e} above {CONDITION_THRESHOLD:.0e}",
            condition=cond,
            bandwidth=h,
        )
    proj = U.T @ (y * sw)
    if ridge > 0.0:
        coef = Vt.T @ (s * proj / (s * s + ridge))
    else:
        coef = Vt.T @ (proj / s)
    return LocalFit(coef, float(coef[0]), wsum, count, cond)


def _weighted_quantile(values, weights, tau):
    """Exact minimizer of sum_i w_i rho_tau(v_i - a) over a."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    cw = np.cumsum(weights[order])
    target = tau * cw[-1]
    pos = int(np.searchsorted(cw, target))
    pos = min(pos, v.size - 1)
    return float(v[pos])


def _check_objective(X, y, w, beta, tau):
    r = y - X @ beta
    return float(np.sum(w * (tau - (r <= 0)) * r))


def _quantile_lp(X, y, w, tau):
    m, q = X.shape
    cost = np.concatenate([np.zeros(q), tau * w, (1.0 - tau) * w])
    eye = sparse.eye(m, format="csc")
    A_eq = sparse.hstack([sparse.csc_matrix(X), eye, -eye], format="csc")
    bounds = [(None, None)] * q + [(0, None)] * (2 * m)
    res = linprog(cost, A_eq=A_eq, b_eq=y, bounds=bounds, method="highs")
    if not res.success:  # pragma: no cover - HiGHS is reliable on these LPs
        return None
    return res.x[:q]


def _quantile_irls(X, y, w, tau, start, max_iter):
    """Smoothed-check IRLS with geometric continuation of the smoothing
    parameter; tracks the best exact objective seen.

    Coarse smoothing levels use a loose stopping rule; only the final level
    runs to full precision, which is where the objective-gap contract binds.
    """
    scale = float(np.sqrt(np.average((y - np.average(y, weights=w)) ** 2, weights=w)))
    if scale <= 0:
        scale = 1.0
    rhs_const = (2.0 * tau - 1.0) * (X.T @ w)
    beta = start.copy()
    r = y - X @ beta
    obj = float(np.sum(w * (tau - (r <= 0)) * r))
    best_beta, best_obj = beta.copy(), obj
    iterations = 0
    last = _IRLS_LEVELS[-1]
    for level in _IRLS_LEVELS:
        delta = scale * level
        tol = 1e-11 if level == last else 1e-3 * level
        prev_obj = None
        for _ in range(_IRLS_INNER):
            if iterations >= max_iter:
                raise SolverNotConverged(
                    f"quantile IRLS exhausted {max_iter} iterations",
                    best_objective=best_obj,
                )
            iterations += 1
            d = w / np.maximum(np.abs(r), delta)
            G = X.T @ (X * d[:, None])
            rhs = X.T @ (d * y) + rhs_const
            try:
                beta = np.linalg.solve(G, rhs)
            except np.linalg.LinAlgError:
                beta = np.linalg.lstsq(G, rhs, rcond=None)[0]
            r = y - X @ beta
            obj = float(np.sum(w * (tau - (r <= 0)) * r))
            if obj < best_obj:
                best_obj = obj
                best_beta = beta.copy()
            if prev_obj is not None and abs(prev_obj - obj) <= tol * (1.0 + abs(obj)):
                break
            prev_obj = obj
        # resume each level from the best point found so far
        if obj > best_obj:
            beta = best_beta.copy()
            r = y - X @ beta
            obj = best_obj
    return _vertex_polish(X, y, w, tau, best_beta, best_obj)


def _vertex_polish(X, y, w, tau, beta, best_obj):
    """Purify a near-optimal fit to an interpolating vertex.

    The check objective attains its minimum on a basic solution that fits q
    of the points exactly; candidate subsets are drawn from the points with
    the smallest absolute residuals under the current fit.
    """
    m, q = X.shape
    pool = q
    while pool < min(m, 64) and math.comb(pool + 1, q) <= 512:
        pool += 1
    r = y - X @ beta
    cand = np.argsort(np.abs(r), kind="stable")[:pool]
    subsets = np.array(list(combinations(cand, q)))
    dets = np.linalg.det(X[subsets])
    subsets = subsets[np.abs(dets) > 1e-300]
    if subsets.size == 0:
        return beta, best_obj
    B = np.linalg.solve(X[subsets], y[subsets][..., None])[..., 0]
    best_beta = beta
    for lo in range(0, B.shape[0], 64):
        blk = B[lo : lo + 64]
        R = y[None, :] - blk @ X.T
        objs = np.sum(w[None, :] * (tau - (R <= 0)) * R, axis=1)
        objs = np.where(np.isfinite(objs), objs, np.inf)
        j = int(np.argmin(objs))
        if objs[j] < best_obj:
            best_obj = float(objs[j])
            best_beta = blk[j].copy()
    return best_beta, best_obj


def local_poly_quantile(sample, kernel, h, basis, tau, max_iter=600):
    """Weighted local polynomial quantile fit; intercept estimates the
    conditional tau-quantile at the origin."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    X, y, w, wsum, count = _active_design(sample, kernel, h, basis)

    if len(basis) == 1:
        a = _weighted_quantile(y, w, tau)
        beta = np.array([a])
        obj = _check_objective(X, y, w, beta, tau)
        return LocalFit(beta, a, wsum, count, 1.0, objective=obj)

    s = np.linalg.svd(X * np.sqrt(w)[:, None], compute_uv=False)
    cond = float("inf") if s[-1] == 0 else float((s[0] / s[-1]) ** 2)

    if count <= _LP_CUTOFF:
        beta = _quantile_lp(X, y, w, tau)
        if beta is not None:
            obj = _check_objective(X, y, w, beta, tau)
            return LocalFit(beta, float(beta[0]), wsum, count, cond, objective=obj)

    # warm start from the weighted least-squares fit
    sw = np.sqrt(w)
    start = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]
    beta, obj = _quantile_irls(X, y, w, tau, start, max_iter)
    return LocalFit(beta, float(beta[0]), wsum, count, cond, objective=obj)
