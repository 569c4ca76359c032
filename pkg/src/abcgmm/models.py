"""Built-in estimation problems with known structure.

Each model knows how to generate observed data, expose its prior, and build
the estimation problem(s) it supports.  The normal-means model has an exact
Gaussian posterior and serves as the analytic oracle; the quantile IV model
is the nonsmooth overidentified workhorse; the location-scale toy gives the
simulated-statistic pipeline an exactly identified fast simulator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .estimators import BilProblem, GmmProblem, WeightPolicy, coordinate_functionals
from .sampling import Marginal, PriorSpec

__all__ = [
    "NormalMeansModel",
    "QuantileIvModel",
    "QuantileIvData",
    "ToyLocationScaleModel",
    "normal_analytic_posterior",
    "quantile_iv_generate",
    "quantile_iv_moments",
    "iv_baseline",
    "toy_location_scale_simulate",
    "build_model",
    "MODEL_REGISTRY",
]


# ---------------------------------------------------------------------------
# normal means


@dataclass
class NormalMeansModel:
    """Vector of normal sample means with known covariance.

    Exactly identified when k = d (prior mu ~ N(mu0, Sigma0)); the
    overidentified variant has k = 1 with mu = u * ones(d) and a scalar
    normal prior on u.
    """

    d: int = 1
    k: int = 1
    n: int = 100
    sigma: np.ndarray = None  # data covariance Sigma, defaults to identity
    prior_mean: np.ndarray = 0.0
    prior_sd: np.ndarray = 1.0
    mu_true: np.ndarray = 0.0

    def __post_init__(self):
        if self.k not in (self.d, 1):
            raise ValueError("supported cases are k = d and the overidentified k = 1")
        if self.sigma is None:
            self.sigma = np.eye(self.d)
        else:
            self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
            if self.sigma.shape == (1, 1) and self.d > 1:
                self.sigma = float(self.sigma[0, 0]) * np.eye(self.d)
        vals = np.linalg.eigvalsh(self.sigma)
        if vals.min() <= 0:
            raise ValueError("data covariance must be positive definite")
        self.prior_mean = np.asarray(self.prior_mean, dtype=float).reshape(-1)
        self.prior_sd = np.asarray(self.prior_sd, dtype=float).reshape(-1)
        if self.prior_mean.size == 1 and self.k > 1:
            self.prior_mean = np.full(self.k, float(self.prior_mean[0]))
        if self.prior_sd.size == 1 and self.k > 1:
            self.prior_sd = np.full(self.k, float(self.prior_sd[0]))
        if not np.all(self.prior_sd > 0):
            raise ValueError("prior standard deviations must be positive")
        self.mu_true = np.asarray(self.mu_true, dtype=float).reshape(-1)
        if self.mu_true.size == 1 and self.k > 1:
            self.mu_true = np.full(self.k, float(self.mu_true[0]))

    @property
    def parameter_names(self):
        if self.k == 1:
            return ("mu",)
        return tuple(f"mu{j + 1}" for j in range(self.k))

    @property
    def true_parameters(self):
        return self.mu_true.copy()

    def with_true(self, theta):
        return replace(self, mu_true=np.asarray(theta, dtype=float))

    def prior(self):
        margs = [Marginal("normal", m, s) for m, s in zip(self.prior_mean, self.prior_sd)]
        return PriorSpec.product(margs)

    def generate_observation(self, seed):
        """Observed statistic: the sample mean vector, drawn at mu_true."""
        rng = np.random.default_rng(seed)
        mean = self.mu_true if self.k == self.d else float(self.mu_true[0]) * np.ones(self.d)
        chol = np.linalg.cholesky(self.sigma / self.n)
        return mean + chol @ rng.standard_normal(self.d)

    def gmm_problem(self, xbar):
        xbar = np.asarray(xbar, dtype=float).reshape(-1)
        sigma_inv = np.linalg.inv(self.sigma)
        if self.k == self.d:
            batch = lambda T: T - xbar
        else:
            ones = np.ones(self.d)
            batch = lambda T: T[:, [0]] * ones - xbar
        return GmmProblem(
            moment_function=lambda t: batch(np.atleast_2d(t))[0],
            n=self.n,
            weight_policy=WeightPolicy.fixed(sigma_inv),
            functionals=coordinate_functionals(self.parameter_names),
            moment_dimension=self.d,
            param_dimension=self.k,
            moment_function_batch=batch,
            covariance_estimator=lambda t: self.sigma,
        )

    def analytic_posterior(self, xbar, y):
        return normal_analytic_posterior(self, xbar, y)


def normal_analytic_posterior(model, xbar, y):
    """Exact Gaussian posterior moments of the parameter given Y = y.

    Exact identification: E = (Sigma/n)(Sigma0 + Sigma/n)^{-1} mu0
    + Sigma0 (Sigma0 + Sigma/n)^{-1} (xbar + y), with matching covariance.
    The overidentified k = 1 case uses the rank-one prior mu = u * ones and
    tends to the GLS combination of (xbar + y) as n grows.
    """
    xbar = np.asarray(xbar, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size == 1 and model.d > 1:
        y = np.full(model.d, float(y[0]))
    sig_n = model.sigma / model.n
    if model.k == model.d:
        sigma0 = np.diag(model.prior_sd**2)
        A = np.linalg.inv(sigma0 + sig_n)
        mean = sig_n @ A @ model.prior_mean + sigma0 @ A @ (xbar + y)
        cov = sigma0 @ A @ sig_n
        return mean, 0.5 * (cov + cov.T)
    # overidentified: scalar u with prior N(u0, s0^2), mu = u * ones(d)
    u0 = float(model.prior_mean[0])
    s0sq = float(model.prior_sd[0]) ** 2
    ones = np.ones(model.d)
    sig_inv = np.linalg.inv(model.sigma)
    quad = float(ones @ sig_inv @ ones)
    denom = 1.0 + s0sq * model.n * quad
    mean = u0 / denom + s0sq * model.n * float(ones @ sig_inv @ (xbar + y)) / denom
    var = s0sq / denom
    return np.array([mean]), np.array([[var]])


def gls_combination(sigma, target):
    """Large-n limit of the overidentified posterior mean: the generalized
    least-squares pooling of the statistic coordinates."""
    ones = np.ones(sigma.shape[0])
    sig_inv = np.linalg.inv(sigma)
    return float(ones @ sig_inv @ np.asarray(target, dtype=float)) / float(ones @ sig_inv @ ones)


# ---------------------------------------------------------------------------
# quantile IV


@dataclass
class QuantileIvData:
    y: np.ndarray
    x: np.ndarray  # (n, 2): constant and endogenous regressor
    z: np.ndarray  # (n, 3): constant and two instruments

    def to_csv(self, path):
        """Column order is fixed: y, x columns, z columns."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["y", "x1", "x2", "z1", "z2", "z3"])
            for i in range(self.y.size):
                writer.writerow(
                    [repr(float(v)) for v in (self.y[i], *self.x[i], *self.z[i])]
                )

    @classmethod
    def from_csv(cls, path):
        rows = np.loadtxt(path, delimiter=",", skiprows=1)
        return cls(rows[:, 0], rows[:, 1:3], rows[:, 3:6])


@dataclass
class QuantileIvModel:
    """Endogenous linear model estimated through the instrumented quantile
    moment condition g(b) = mean of z * (tau - 1(y <= x'b)).

    The error exp((z'alpha)^2 * v) - 1 has conditional median zero but a
    positive conditional mean, so plain IV is biased while the quantile
    moment identifies beta.
    """

    alpha: np.ndarray = (0.2, 0.2, 0.2)
    beta: np.ndarray = (1.0, 1.0)
    tau: float = 0.5
    n: int = 200
    prior_low: np.ndarray = (0.0, 0.0)
    prior_high: np.ndarray = (3.0, 3.0)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1)
        if self.alpha.size != 3 or self.beta.size != 2:
            raise ValueError("alpha must have length 3 and beta length 2")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if self.n < 1:
            raise ValueError("sample size must be >= 1")
        self.prior_low = np.asarray(self.prior_low, dtype=float).reshape(-1)
        self.prior_high = np.asarray(self.prior_high, dtype=float).reshape(-1)

    @property
    def parameter_names(self):
        return ("beta1", "beta2")

    @property
    def true_parameters(self):
        return self.beta.copy()

    def with_true(self, theta):
        return replace(self, beta=np.asarray(theta, dtype=float))

    def prior(self):
        return PriorSpec.uniform_box(self.prior_low, self.prior_high)

    def generate_observation(self, seed):
        return quantile_iv_generate(self, seed)

    def gmm_problem(self, data):
        W = quantile_iv_weight(data, self.tau)
        tau = self.tau

        def batch(B):
            return _quantile_iv_moments_batch(data, B, tau)

        return GmmProblem(
            moment_function=lambda b: quantile_iv_moments(data, b, tau)[0],
            n=data.y.size,
            weight_policy=WeightPolicy.fixed(W),
            functionals=coordinate_functionals(self.parameter_names),
            moment_dimension=3,
            param_dimension=2,
            moment_function_batch=batch,
        )

    def baseline_estimates(self, data):
        """Comparison rows for the replication report."""
        return {"iv": iv_baseline(data)}


def quantile_iv_generate(model, seed):
    """Data generating process: x4 independent standard normal factors build
    the endogenous regressor and the two instruments; the error is
    exp((z'alpha)^2 * v) - 1 with v standard normal."""
    rng = np.random.default_rng(seed)
    n = model.n
    xi = rng.standard_normal((n, 4))
    upsilon = rng.standard_normal(n)
    x_t = xi[:, 0] + xi[:, 1]
    z1 = xi[:, 1] + xi[:, 2]
    z2 = xi[:, 0] + xi[:, 3]
    x = np.column_stack([np.ones(n), x_t])
    z = np.column_stack([np.ones(n), z1, z2])
    eps = np.exp((z @ model.alpha) ** 2 * upsilon) - 1.0
    y = x @ model.beta + eps
    return QuantileIvData(y, x, z)


def quantile_iv_weight(data, tau=0.5):
    """Optimal weight matrix, parameter free: the moment variance is
    tau(1-tau) * mean of z z', and its inverse calibrates both the fit and
    the perturbation noise."""
    n = data.y.size
    gram = data.z.T @ data.z / n
    return np.linalg.inv(tau * (1.0 - tau) * gram)


def quantile_iv_moments(data, beta, tau):
    """Moment vector g(beta) and the fixed optimal weight matrix."""
    beta = np.asarray(beta, dtype=float).reshape(-1)
    n = data.y.size
    ind = (data.y <= data.x @ beta).astype(float)
    g = data.z.T @ (tau - ind) / n
    return g, quantile_iv_weight(data, tau)


def _quantile_iv_moments_batch(data, B, tau):
    """Moments for S parameter vectors at once: (S, 2) -> (S, 3)."""
    fitted = data.x @ np.asarray(B, dtype=float).T  # (n, S)
    ind = (data.y[:, None] <= fitted).astype(float)
    return ((tau - ind).T @ data.z) / data.y.size


def iv_baseline(data):
    """Two-stage least squares, the biased linear comparison estimator."""
    z, x, y = data.z, data.x, data.y
    zz = z.T @ z
    try:
        proj = z @ np.linalg.solve(zz, z.T @ x)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular instrument Gram matrix") from exc
    xpx = proj.T @ x
    if abs(np.linalg.det(xpx)) < 1e-12:
        raise ValueError("singular first stage")
    return np.linalg.solve(xpx, proj.T @ y)


# ---------------------------------------------------------------------------
# location-scale toy


@dataclass
class ToyLocationScaleModel:
    """Normal location-scale model summarized by (sample mean, sample sd);
    exactly identified and cheap to simulate."""

    mu: float = 0.0
    sigma: float = 1.0
    n: int = 100
    prior_low: np.ndarray = (-5.0, 0.1)
    prior_high: np.ndarray = (5.0, 5.0)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("scale must be positive")
        self.prior_low = np.asarray(self.prior_low, dtype=float).reshape(-1)
        self.prior_high = np.asarray(self.prior_high, dtype=float).reshape(-1)

    @property
    def parameter_names(self):
        return ("mu", "sigma")

    @property
    def true_parameters(self):
        return np.array([self.mu, self.sigma])

    def with_true(self, theta):
        return replace(self, mu=float(theta[0]), sigma=float(theta[1]))

    def prior(self):
        return PriorSpec.uniform_box(self.prior_low, self.prior_high)

    def generate_observation(self, seed):
        return toy_location_scale_simulate(np.array([self.mu, self.sigma]), self.n, seed)

    def bil_problem(self, observed, m=None):
        return BilProblem(
            simulator=toy_location_scale_simulate,
            observed_statistic=observed,
            n=self.n,
            m=m,
            functionals=coordinate_functionals(self.parameter_names),
        )


def toy_location_scale_simulate(theta, m, seed):
    """Summary statistics (sample mean, sample sd) of m normal variates."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    mu, sigma = float(theta[0]), float(theta[1])
    if not sigma > 0:
        raise ValueError("scale must be positive")
    if m < 2:
        raise ValueError("need at least two observations for a standard deviation")
    rng = np.random.default_rng(seed)
    x = rng.normal(mu, sigma, size=m)
    return np.array([x.mean(), x.std(ddof=1)])


# ---------------------------------------------------------------------------
# registry

MODEL_REGISTRY = {
    "normal_means": NormalMeansModel,
    "quantile_iv": QuantileIvModel,
    "toy_location_scale": ToyLocationScaleModel,
}


def build_model(name, params=None):
    if name not in MODEL_REGISTRY:
        raise ValueError(f"unknown model {name!r}; available: {sorted(MODEL_REGISTRY)}")
    return MODEL_REGISTRY[name](**(params or {}))
