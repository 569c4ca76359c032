import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abcgmm.errors import InsufficientSupport, SingularDesign, SolverNotConverged
from abcgmm.kernels import KernelSpec
from abcgmm.localreg import (
    RegressionSample,
    check_function,
    local_poly_mean,
    local_poly_quantile,
)
from abcgmm.polybasis import basis_matrix, build_index_set

GAUSS1 = KernelSpec("gaussian", 1)
UNIF1 = KernelSpec("uniform", 1)


def check_objective(sample, kernel, h, basis, tau, beta):
    w = sample.extra_weights * kernel.weights(sample.points / h)
    X = basis_matrix(sample.points, basis)
    r = sample.responses - X @ beta
    return float(np.sum(w * (tau - (r <= 0)) * r))


def brute_force_quantile_objective(sample, kernel, h, basis, tau):
    """Exhaustive vertex oracle: the optimum interpolates len(basis) points,
    so enumerate every such subset (plus intercept-only candidates)."""
    w = sample.extra_weights * kernel.weights(sample.points / h)
    X = basis_matrix(sample.points, basis)
    y = sample.responses
    q = X.shape[1]
    best = np.inf
    for a in y:  # degenerate candidates: flat fit through one response
        beta = np.zeros(q)
        beta[0] = a
        r = y - X @ beta
        best = min(best, float(np.sum(w * (tau - (r <= 0)) * r)))
    for subset in itertools.combinations(range(len(y)), q):
        Xs = X[list(subset)]
        if abs(np.linalg.det(Xs)) < 1e-12:
            continue
        beta = np.linalg.solve(Xs, y[list(subset)])
        r = y - X @ beta
        best = min(best, float(np.sum(w * (tau - (r <= 0)) * r)))
    return best


# -- check function -----------------------------------------------------------


def test_check_function_examples():
    assert check_function(0.0, 0.7) == 0.0
    assert check_function(1.0, 0.3) == pytest.approx(0.3)
    assert check_function(-1.0, 0.3) == pytest.approx(0.7)


def test_check_function_rejects_bad_tau():
    for tau in (0.0, 1.0, -0.2, 1.7):
        with pytest.raises(ValueError):
            check_function(1.0, tau)


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=-1e6, max_value=1e6), st.floats(min_value=0.01, max_value=0.99))
def test_check_function_nonnegative_zero_iff_zero(x, tau):
    val = check_function(x, tau)
    assert val >= 0.0
    assert (val == 0.0) == (x == 0.0)


# -- mean fits ------------------------------------------------------------


def _sample_1d(seed=0, n=60, slope=3.0, intercept=2.0, noise=0.0):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=(n, 1))
    eta = intercept + slope * y[:, 0] + noise * rng.standard_normal(n)
    return RegressionSample(y, eta)


def test_mean_exact_line():
    sample = _sample_1d()
    for h in (0.3, 1.0, 5.0):
        fit = local_poly_mean(sample, GAUSS1, h, build_index_set(1, 1))
        assert np.allclose(fit.coefficients, [2.0, 3.0], atol=1e-9)
        assert fit.intercept == pytest.approx(2.0, abs=1e-9)


def test_local_constant_is_weighted_average():
    sample = _sample_1d(noise=1.0)
    fit = local_poly_mean(sample, UNIF1, 100.0, build_index_set(1, 0))
    assert fit.intercept == pytest.approx(sample.responses.mean(), abs=1e-12)
    assert fit.active_count == sample.size


def test_quadratic_recovered_against_dense_lstsq():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(80, 1))
    eta = pts[:, 0] ** 2
    basis = build_index_set(1, 2)
    fit = local_poly_mean(RegressionSample(pts, eta), GAUSS1, 1.0, basis)
    assert fit.intercept == pytest.approx(0.0, abs=1e-10)
    assert fit.coefficients[2] == pytest.approx(1.0, abs=1e-10)
    # independent dense solve of the same weighted least squares problem
    w = GAUSS1.weights(pts / 1.0)
    X = basis_matrix(pts, basis)
    ref = np.linalg.lstsq(X * np.sqrt(w)[:, None], eta * np.sqrt(w), rcond=None)[0]
    assert np.allclose(fit.coefficients, ref, atol=1e-10)


@pytest.mark.parametrize("d,p", [(1, 2), (2, 1), (2, 2), (3, 1)])
def test_polynomial_reproduction(d, p):
    rng = np.random.default_rng(10 * d + p)
    basis = build_index_set(d, p)
    pts = rng.normal(size=(30 * len(basis), d))
    coef = rng.normal(size=len(basis))
    eta = basis_matrix(pts, basis) @ coef
    fit = local_poly_mean(RegressionSample(pts, eta), KernelSpec("gaussian", d), 0.9, basis)
    assert np.allclose(fit.coefficients, coef, rtol=1e-8, atol=1e-8)


def test_weight_scale_invariance():
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(50, 1))
    eta = np.sin(pts[:, 0])
    omega = rng.uniform(0.5, 2.0, size=50)
    basis = build_index_set(1, 1)
    base = local_poly_mean(RegressionSample(pts, eta, omega), GAUSS1, 0.7, basis)
    for c in (1e-6, 3.7, 1e6):
        scaled = local_poly_mean(RegressionSample(pts, eta, c * omega), GAUSS1, 0.7, basis)
        assert np.allclose(scaled.coefficients, base.coefficients, atol=1e-10)
    qbase = local_poly_quantile(RegressionSample(pts, eta, omega), GAUSS1, 0.7, basis, 0.3)
    qscaled = local_poly_quantile(RegressionSample(pts, eta, 3.7 * omega), GAUSS1, 0.7, basis, 0.3)
    assert np.allclose(qscaled.coefficients, qbase.coefficients, atol=1e-8)


def test_affine_equivariance():
    sample = _sample_1d(noise=0.8, seed=9)
    basis = build_index_set(1, 1)
    base = local_poly_mean(sample, GAUSS1, 0.8, basis)
    a, b = -2.5, 4.0
    moved = RegressionSample(sample.points, a * sample.responses + b)
    fit = local_poly_mean(moved, GAUSS1, 0.8, basis)
    assert fit.intercept == pytest.approx(a * base.intercept + b, rel=1e-9)
    # quantile version needs a > 0 to keep tau on the same side
    qbase = local_poly_quantile(sample, GAUSS1, 0.8, basis, 0.25)
    qmoved = local_poly_quantile(
        RegressionSample(sample.points, 2.0 * sample.responses + 1.0), GAUSS1, 0.8, basis, 0.25
    )
    assert qmoved.intercept == pytest.approx(2.0 * qbase.intercept + 1.0, abs=1e-6)


def test_convex_hull_bound_for_local_constant():
    rng = np.random.default_rng(12)
    pts = rng.normal(size=(40, 1))
    eta = rng.normal(size=40)
    fit = local_poly_mean(RegressionSample(pts, eta), KernelSpec("epanechnikov", 1), 0.5, build_index_set(1, 0))
    active = np.abs(pts[:, 0]) < 0.5
    assert eta[active].min() - 1e-12 <= fit.intercept <= eta[active].max() + 1e-12


def test_insufficient_support():
    pts = np.array([[0.1], [5.0], [6.0]])
    eta = np.array([1.0, 2.0, 3.0])
    with pytest.raises(InsufficientSupport):
        local_poly_mean(RegressionSample(pts, eta), KernelSpec("epanechnikov", 1), 0.5, build_index_set(1, 1))


def test_singular_design_raises_and_ridge_bypasses():
    # two regressor columns exactly collinear
    rng = np.random.default_rng(2)
    y1 = rng.normal(size=50)
    pts = np.column_stack([y1, 2.0 * y1])
    eta = 1.0 + y1
    sample = RegressionSample(pts, eta)
    basis = build_index_set(2, 1)
    kern = KernelSpec("gaussian", 2)
    with pytest.raises(SingularDesign):
        local_poly_mean(sample, kern, 1.0, basis)
    fit = local_poly_mean(sample, kern, 1.0, basis, ridge=1e-8)
    assert np.isfinite(fit.intercept)
    assert fit.condition_estimate > 1e12


def test_effective_weight_and_active_count():
    pts = np.array([[0.0], [0.4], [2.0]])
    sample = RegressionSample(pts, np.array([1.0, 2.0, 3.0]))
    kern = KernelSpec("epanechnikov", 1)
    fit = local_poly_mean(sample, kern, 1.0, build_index_set(1, 0))
    w = kern.weights(pts / 1.0)
    assert fit.effective_weight == pytest.approx(w.sum())
    assert fit.active_count == 2


# -- quantile fits ---------------------------------------------------------


def test_quantile_constant_responses():
    pts = np.random.default_rng(0).normal(size=(25, 1))
    sample = RegressionSample(pts, np.full(25, 3.25))
    for tau in (0.1, 0.5, 0.9):
        fit = local_poly_quantile(sample, GAUSS1, 1.0, build_index_set(1, 1), tau)
        assert fit.intercept == pytest.approx(3.25, abs=1e-10)


def test_local_constant_median_is_sample_median():
    rng = np.random.default_rng(8)
    pts = rng.normal(size=(11, 1))
    eta = rng.normal(size=11)
    fit = local_poly_quantile(RegressionSample(pts, eta), UNIF1, 50.0, build_index_set(1, 0), 0.5)
    # brute-force oracle: minimize the check objective over response values
    objs = {a: np.sum(np.abs(eta - a) * 0.5) for a in eta}
    best = min(objs.values())
    assert np.sum(np.abs(eta - fit.intercept) * 0.5) == pytest.approx(best, abs=1e-12)
    assert fit.intercept == pytest.approx(np.median(eta), abs=1e-12)


def test_quantile_exact_line_any_tau():
    sample = _sample_1d(seed=5, n=10)
    basis = build_index_set(1, 1)
    for tau in (0.2, 0.5, 0.8):
        fit = local_poly_quantile(sample, GAUSS1, 1.0, basis, tau)
        assert fit.intercept == pytest.approx(2.0, abs=1e-8)
        oracle = brute_force_quantile_objective(sample, GAUSS1, 1.0, basis, tau)
        got = check_objective(sample, GAUSS1, 1.0, basis, tau, fit.coefficients)
        assert got <= oracle + 1e-10


@pytest.mark.parametrize("trial", range(8))
def test_quantile_matches_brute_force_small_instances(trial):
    rng = np.random.default_rng(100 + trial)
    n = int(rng.integers(5, 13))
    p = int(rng.integers(0, 2))
    tau = float(rng.uniform(0.1, 0.9))
    pts = rng.normal(size=(n, 1))
    eta = rng.normal(size=n)
    omega = rng.uniform(0.2, 2.0, size=n)
    sample = RegressionSample(pts, eta, omega)
    basis = build_index_set(1, p)
    fit = local_poly_quantile(sample, GAUSS1, 1.3, basis, tau)
    oracle = brute_force_quantile_objective(sample, GAUSS1, 1.3, basis, tau)
    got = check_objective(sample, GAUSS1, 1.3, basis, tau, fit.coefficients)
    assert got <= oracle + 1e-6


def test_quantile_monotone_in_tau_for_local_constant():
    rng = np.random.default_rng(21)
    pts = rng.normal(size=(200, 1))
    eta = rng.normal(size=200)
    sample = RegressionSample(pts, eta)
    basis = build_index_set(1, 0)
    qs = [
        local_poly_quantile(sample, GAUSS1, 0.8, basis, tau).intercept
        for tau in (0.1, 0.25, 0.5, 0.75, 0.9)
    ]
    assert qs == sorted(qs)


def test_quantile_irls_path_agrees_with_lp_path():
    # same instance solved above and below the LP size cutoff
    rng = np.random.default_rng(33)
    n = 1200
    pts = rng.normal(size=(n, 1))
    eta = 1.0 + 0.5 * pts[:, 0] + rng.standard_normal(n)
    sample = RegressionSample(pts, eta)
    basis = build_index_set(1, 1)
    big = local_poly_quantile(sample, GAUSS1, 1.0, basis, 0.3)  # IRLS route
    sub = RegressionSample(pts[:500], eta[:500])
    small = local_poly_quantile(sub, GAUSS1, 1.0, basis, 0.3)  # LP route
    for fit, smp in ((big, sample), (small, sub)):
        oracle_obj = check_objective(smp, GAUSS1, 1.0, basis, 0.3, fit.coefficients)
        assert fit.objective == pytest.approx(oracle_obj, rel=1e-10)


def test_quantile_solver_budget_error():
    rng = np.random.default_rng(40)
    n = 2000
    pts = rng.normal(size=(n, 1))
    eta = rng.standard_normal(n)
    sample = RegressionSample(pts, eta)
    with pytest.raises(SolverNotConverged) as err:
        local_poly_quantile(sample, GAUSS1, 1.0, build_index_set(1, 1), 0.5, max_iter=2)
    assert err.value.best_objective is not None


def test_quantile_insufficient_support():
    pts = np.array([[3.0], [4.0]])
    with pytest.raises(InsufficientSupport):
        local_poly_quantile(
            RegressionSample(pts, np.array([1.0, 2.0])),
            KernelSpec("epanechnikov", 1),
            0.5,
            build_index_set(1, 0),
            0.5,
        )


# -- sign symmetry ----------------------------------------------------------


def test_sign_symmetry_on_symmetric_design():
    rng = np.random.default_rng(17)
    half = rng.normal(size=(30, 1))
    pts = np.vstack([half, -half])
    eta = np.concatenate([half[:, 0] + 1.0, -half[:, 0] + 1.0])  # even pairing
    kern = GAUSS1
    p0 = build_index_set(1, 0)
    p1 = build_index_set(1, 1)
    flipped = RegressionSample(-pts, eta)
    sample = RegressionSample(pts, eta)
    f0 = local_poly_mean(sample, kern, 0.9, p0)
    g0 = local_poly_mean(flipped, kern, 0.9, p0)
    assert f0.intercept == pytest.approx(g0.intercept, abs=1e-12)
    f1 = local_poly_mean(sample, kern, 0.9, p1)
    g1 = local_poly_mean(flipped, kern, 0.9, p1)
    assert f1.intercept == pytest.approx(g1.intercept, abs=1e-10)
    assert f1.coefficients[1] == pytest.approx(-g1.coefficients[1], abs=1e-10)


def test_sample_validation():
    with pytest.raises(ValueError):
        RegressionSample(np.zeros((3, 1)), np.zeros(2))
    with pytest.raises(ValueError):
        RegressionSample(np.zeros((2, 1)), np.zeros(2), np.array([-1.0, 1.0]))
    with pytest.raises(ValueError):
        RegressionSample(np.zeros((2, 1)), np.zeros(2), np.zeros(2))
