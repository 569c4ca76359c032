"""End-to-end estimation pipelines: simulated-statistic (indirect inference)
and perturbed-moment (ABC-GMM) regressions, plus the simulated-Laplace
weighted-mean estimator.

Both pipelines produce regressors local to zero: either centered simulated
statistics T_m^s - T_n, or moment values perturbed with scaled Gaussian
noise, y_s = g(theta_s) + m^{-1/2} W(theta_s)^{-1/2} xi_s.  Point estimates
and posterior quantiles then come from local polynomial fits at the origin.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import EstimationError, InsufficientSupport, WeightUnderflow
from .kernels import BandwidthRule
from .localreg import RegressionSample, local_poly_mean, local_poly_quantile
from .sampling import counter_normals, derive_seeds

__all__ = [
    "Functional",
    "coordinate_functionals",
    "BilProblem",
    "GmmProblem",
    "WeightPolicy",
    "RegressorSet",
    "PosteriorSummary",
    "matrix_inverse_sqrt",
    "bil_regressors",
    "gmm_regressors",
    "resolve_two_step_weights",
    "estimate",
    "rescale_interval",
    "sl_gmm_estimate",
]


@dataclass(frozen=True)
class Functional:
    """Named scalar map of the parameter vector, eta_j(theta)."""

    name: str
    fn: Callable
    batch: Callable = None

    def evaluate(self, thetas):
        thetas = np.atleast_2d(thetas)
        if self.batch is not None:
            return np.asarray(self.batch(thetas), dtype=float).reshape(-1)
        return np.array([float(self.fn(t)) for t in thetas])


def coordinate_functionals(names):
    """One functional per parameter coordinate."""

    def projector(j):
        return Functional(names[j], lambda t, j=j: t[j], batch=lambda T, j=j: T[:, j])

    return tuple(projector(j) for j in range(len(names)))


@dataclass
class BilProblem:
    """Indirect-inference problem: a simulator for the summary statistic and
    the observed statistic it is matched against."""

    simulator: Callable  # (theta, m, seed) -> statistic vector
    observed_statistic: np.ndarray
    n: int
    m: int = None
    functionals: tuple = ()

    def __post_init__(self):
        self.observed_statistic = np.asarray(self.observed_statistic, dtype=float).reshape(-1)
        if self.m is None:
            self.m = self.n
        if self.m < 1:
            raise ValueError("simulation size m must be >= 1")


@dataclass(frozen=True)
class WeightPolicy:
    """Moment weighting: identity, a fixed matrix, two-step (fixed matrix
    computed from an initial pass) or continuously updated per draw."""

    kind: str  # identity | fixed | two_step | continuous_updating
    matrix: np.ndarray = None

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def fixed(cls, matrix):
        return cls("fixed", matrix=np.asarray(matrix, dtype=float))

    @classmethod
    def two_step(cls):
        return cls("two_step")

    @classmethod
    def continuous_updating(cls):
        return cls("continuous_updating")


@dataclass
class GmmProblem:
    """Moment-condition problem with d >= k moments for k parameters."""

    moment_function: Callable  # theta -> g_hat(theta), length d
    n: int
    weight_policy: WeightPolicy
    functionals: tuple
    moment_dimension: int
    param_dimension: int
    moment_function_batch: Callable = None  # (S, k) -> (S, d), optional
    covariance_estimator: Callable = None  # theta -> Sigma_hat(theta), for two_step / CU

    def __post_init__(self):
        if self.moment_dimension < self.param_dimension:
            raise ValueError("order condition failed: need d >= k moment conditions")

    def moments(self, thetas):
        thetas = np.atleast_2d(thetas)
        if self.moment_function_batch is not None:
            out = np.asarray(self.moment_function_batch(thetas), dtype=float)
        else:
            out = np.array([self.moment_function(t) for t in thetas], dtype=float)
        if out.shape != (thetas.shape[0], self.moment_dimension):
            raise ValueError("moment function returned wrong shape")
        return out


@dataclass
class RegressorSet:
    """Shared regressors with one response vector per functional."""

    points: np.ndarray
    weights: np.ndarray
    responses: dict
    dropped: int = 0

    def sample(self, name):
        return RegressionSample(self.points, self.responses[name], self.weights)

    def norms(self):
        return np.sqrt(np.einsum("ij,ij->i", self.points, self.points))


@dataclass
class PosteriorSummary:
    """Point estimate, posterior quantiles and confidence interval for one
    functional, with support diagnostics."""

    point_estimate: float
    quantiles: dict
    confidence_interval: tuple
    level: float
    effective_weight: float
    active_count: int
    bandwidth_used: float
    quantile_bandwidth_used: float = None

    def __post_init__(self):
        if self.confidence_interval is not None:
            lo, hi = self.confidence_interval
            if not lo <= hi:
                raise ValueError("confidence interval bounds out of order")


def matrix_inverse_sqrt(W, tol=1e-12):
    """Symmetric M with M @ M = inv(W), via eigendecomposition."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.allclose(W, W.T, rtol=0, atol=1e-10 * max(1.0, float(np.abs(W).max()))):
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(W)
    if vals.min() <= tol * max(1.0, vals.max()):
        raise ValueError(f"matrix is not positive definite (min eigenvalue {vals.min():.3e})")
    M = (vecs / np.sqrt(vals)) @ vecs.T
    return 0.5 * (M + M.T)


def _matrix_sqrt(S, tol=1e-12):
    S = np.asarray(S, dtype=float)
    vals, vecs = np.linalg.eigh(S)
    if vals.min() <= tol * max(1.0, vals.max()):
        raise ValueError("covariance estimate is not positive definite")
    M = (vecs * np.sqrt(vals)) @ vecs.T
    return 0.5 * (M + M.T)


def bil_regressors(problem, draws):
    """Simulate the statistic at every draw and center it at the observed
    value.  Failed simulator calls drop the draw (never retried); the count
    is surfaced in ``dropped``."""
    m = problem.m
    seeds = derive_seeds(draws.seed, "simulate", draws.counters)
    d = problem.observed_statistic.size
    stats = np.empty((draws.size, d))
    ok = np.ones(draws.size, dtype=bool)
    for s in range(draws.size):
        try:
            out = np.asarray(problem.simulator(draws.draws[s], m, int(seeds[s])), dtype=float).reshape(-1)
            if out.size != d or not np.all(np.isfinite(out)):
                raise ValueError("bad simulator output")
            stats[s] = out
        except Exception:
            ok[s] = False
    dropped = int((~ok).sum())
    if not ok.any():
        raise EstimationError("simulator failed at every draw")
    points = stats[ok] - problem.observed_statistic
    thetas = draws.draws[ok]
    responses = {f.name: f.evaluate(thetas) for f in problem.functionals}
    return RegressorSet(points, draws.weights[ok], responses, dropped=dropped)


def _resolve_weight_transform(problem):
    """Return (per-draw?, transform) where transform maps theta (or None) to
    W^{-1/2} for the noise draw."""
    policy = problem.weight_policy
    d = problem.moment_dimension
    if policy.kind == "identity":
        return False, np.eye(d)
    if policy.kind == "fixed":
        return False, matrix_inverse_sqrt(policy.matrix)
    if policy.kind == "continuous_updating":
        if problem.covariance_estimator is None:
            raise ValueError("continuous updating requires a covariance estimator")
        # W(theta) = Sigma(theta)^{-1}, so W^{-1/2} = Sigma(theta)^{1/2}
        return True, lambda theta: _matrix_sqrt(problem.covariance_estimator(theta))
    raise ValueError(
        f"weight policy {policy.kind!r} must be resolved to a fixed matrix before drawing regressors"
    )


def gmm_regressors(problem, draws, m=None, noise_seed=0, disable_noise=False):
    """Perturbed moment regressors y_s = g(theta_s) + m^{-1/2} W^{-1/2} xi_s
    with per-draw standard normal xi.

    ``disable_noise`` is a test hook that forces xi = 0.
    """
    if m is None:
        m = problem.n
    if m < 1:
        raise ValueError("simulation size m must be >= 1")
    G = problem.moments(draws.draws)
    d = problem.moment_dimension
    if disable_noise:
        points = G
    else:
        xi = counter_normals(noise_seed, "xi", draws.counters, d)
        per_draw, transform = _resolve_weight_transform(problem)
        if per_draw:
            noise = np.empty_like(G)
            for s in range(draws.size):
                noise[s] = transform(draws.draws[s]) @ xi[s]
        else:
            noise = xi @ transform.T
        points = G + noise / np.sqrt(m)
    responses = {f.name: f.evaluate(draws.draws) for f in problem.functionals}
    return RegressorSet(points, draws.weights.copy(), responses, dropped=0)


def resolve_two_step_weights(problem, draws, kernel, bandwidth_rule, basis, m=None, noise_seed=0):
    """Replace a two-step weight policy with the fixed matrix it implies.

    A first pass under identity weights estimates the parameter vector; the
    covariance estimator evaluated there fixes W for the real run.
    """
    if problem.weight_policy.kind != "two_step":
        return problem
    if problem.covariance_estimator is None:
        raise ValueError("two-step weighting requires a covariance estimator")
    first = replace(problem, weight_policy=WeightPolicy.identity())
    regs = gmm_regressors(first, draws, m=m, noise_seed=noise_seed)
    theta0 = np.empty(problem.param_dimension)
    for j in range(problem.param_dimension):
        sample = RegressionSample(regs.points, draws.draws[:, j], regs.weights)
        theta0[j] = estimate(sample, kernel, bandwidth_rule, basis, confidence_level=None).point_estimate
    sigma = np.asarray(problem.covariance_estimator(theta0), dtype=float)
    return replace(problem, weight_policy=WeightPolicy.fixed(np.linalg.inv(sigma)))


def estimate(
    sample,
    kernel,
    bandwidth_rule,
    basis,
    quantile_levels=(),
    confidence_level=0.90,
    quantile_bandwidth_rule=None,
    quantile_basis=None,
    ridge=0.0,
):
    """Run the local mean and quantile fits for one functional and assemble
    the posterior summary.

    The bandwidth rule is resolved against the Euclidean norms of the
    regressors.  Quantile fits default to the same basis and rule as the
    mean fit but both can be overridden (for instance degree-0 quantiles
    under a degree-1 mean fit).
    """
    if isinstance(bandwidth_rule, (int, float)):
        bandwidth_rule = BandwidthRule.fixed(bandwidth_rule)
    norms = sample.norms()
    h = bandwidth_rule.resolve(norms)
    if not h > 0:
        raise InsufficientSupport(
            f"bandwidth rule {bandwidth_rule.label()} resolved to {h}", bandwidth=h
        )

    try:
        mean_fit = local_poly_mean(sample, kernel, h, basis, ridge=ridge)
    except EstimationError as exc:
        exc.bandwidth = h
        raise

    # levels are rounded so that user-given values and computed interval
    # tails (e.g. 0.05 vs (1 - 0.9)/2) land on the same dictionary key
    levels = set(_level_key(t) for t in quantile_levels)
    if confidence_level is not None:
        if not 0 < confidence_level < 1:
            raise ValueError("confidence level must lie in (0, 1)")
        tail = _level_key((1.0 - confidence_level) / 2.0)
        levels.update((tail, _level_key(1.0 - tail)))

    hq = h
    if quantile_bandwidth_rule is not None:
        if isinstance(quantile_bandwidth_rule, (int, float)):
            quantile_bandwidth_rule = BandwidthRule.fixed(quantile_bandwidth_rule)
        hq = quantile_bandwidth_rule.resolve(norms)
    qbasis = basis if quantile_basis is None else quantile_basis

    quantiles = {}
    for tau in sorted(levels):
        try:
            qfit = local_poly_quantile(sample, kernel, hq, qbasis, tau)
        except EstimationError as exc:
            exc.bandwidth = hq
            raise
        quantiles[tau] = qfit.intercept

    interval = None
    if confidence_level is not None:
        lo = quantiles[tail]
        hi = quantiles[_level_key(1.0 - tail)]
        interval = (min(lo, hi), max(lo, hi))

    return PosteriorSummary(
        point_estimate=mean_fit.intercept,
        quantiles=quantiles,
        confidence_interval=interval,
        level=confidence_level,
        effective_weight=mean_fit.effective_weight,
        active_count=mean_fit.active_count,
        bandwidth_used=h,
        quantile_bandwidth_used=hq if quantiles else None,
    )


def _level_key(tau):
    return round(float(tau), 10)


def _quantile_at(quantiles, tau):
    if tau in quantiles:
        return quantiles[tau]
    for key, value in quantiles.items():
        if abs(key - tau) < 1e-9:
            return value
    return None


def rescale_interval(summary, m, n, level=None):
    """Confidence interval under simulation size m != n: the quantile
    interval is widened about the posterior median by sqrt(m / min(n, m)).

    With m = n the plain quantile interval is returned unchanged.
    """
    if level is None:
        level = summary.level
    tail = _level_key((1.0 - level) / 2.0)
    qs = summary.quantiles
    med = _quantile_at(qs, 0.5)
    lo = _quantile_at(qs, tail)
    hi = _quantile_at(qs, 1.0 - tail)
    if med is None or lo is None or hi is None:
        raise ValueError(
            f"rescaling needs quantiles at {tail}, 0.5 and {1 - tail}; have {sorted(qs)}"
        )
    factor = np.sqrt(m / min(n, m))
    if factor == 1.0:
        return (lo, hi)
    a = med + factor * (lo - med)
    b = med + factor * (hi - med)
    return (min(a, b), max(a, b))


def sl_gmm_estimate(problem, draws, m=None):
    """Self-normalized weighted mean of the draws under exponential moment
    weights exp(n * Q(theta_s)) with Q(theta) = -0.5 g' W g.

    Log-weights are stabilized by max subtraction; prior-vs-proposal density
    ratios enter through the batch importance weights.
    """
    policy = problem.weight_policy
    if policy.kind == "identity":
        W = np.eye(problem.moment_dimension)
    elif policy.kind == "fixed":
        W = np.asarray(policy.matrix, dtype=float)
    else:
        raise ValueError("simulated-Laplace weighting requires an identity or fixed weight matrix")
    scale = problem.n if m is None else m
    G = problem.moments(draws.draws)
    quad = np.einsum("ij,jk,ik->i", G, W, G)
    logw = np.log(draws.weights) - 0.5 * scale * quad
    top = float(np.max(logw))
    if not np.isfinite(top):
        raise WeightUnderflow(
            "all exponential weights vanished", max_log_weight=top
        )
    w = np.exp(logw - top)
    return (w @ draws.draws) / w.sum()
