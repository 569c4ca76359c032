import numpy as np
import pytest
from scipy import stats

from abcgmm.sampling import (
    DrawBatch,
    Marginal,
    PriorSpec,
    adaptive_proposal,
    counter_normals,
    counter_uniforms,
    derive_seeds,
    halton_point,
    halton_points,
    importance_weights,
    sample_prior,
)


# -- counter-based variates --------------------------------------------------


def test_counter_uniforms_deterministic_and_open():
    a = counter_uniforms(42, "x", np.arange(100), 3)
    b = counter_uniforms(42, "x", np.arange(100), 3)
    assert np.array_equal(a, b)
    assert np.all((a > 0) & (a < 1))


def test_counter_prefix_stability():
    small = counter_uniforms(7, "x", np.arange(50), 2)
    large = counter_uniforms(7, "x", np.arange(500), 4)
    assert np.array_equal(small, large[:50, :2])


def test_counter_streams_differ():
    a = counter_uniforms(7, "alpha", np.arange(50), 1)
    b = counter_uniforms(7, "beta", np.arange(50), 1)
    assert not np.allclose(a, b)
    assert not np.allclose(a, counter_uniforms(8, "alpha", np.arange(50), 1))


def test_counter_uniformity():
    u = counter_uniforms(123, "ks", np.arange(100_000), 1)[:, 0]
    assert stats.kstest(u, "uniform").pvalue > 1e-4
    z = counter_normals(123, "ks", np.arange(100_000), 1)[:, 0]
    assert abs(z.mean()) < 0.02 and abs(z.std() - 1) < 0.02


def test_derive_seeds_distinct():
    seeds = derive_seeds(3, "sim", np.arange(1000))
    assert len(set(seeds.tolist())) == 1000


# -- Halton ------------------------------------------------------------------


def test_halton_base2_first_eight_exact():
    expected = [1 / 2, 1 / 4, 3 / 4, 1 / 8, 5 / 8, 3 / 8, 7 / 8, 1 / 16]
    got = [halton_point(i, [2])[0] for i in range(1, 9)]
    assert got == expected


def test_halton_other_bases():
    assert halton_point(1, [3])[0] == pytest.approx(1 / 3, abs=1e-15)
    assert halton_point(2, [3])[0] == pytest.approx(2 / 3, abs=1e-15)
    pt = halton_point(5, [2, 3])
    assert pt[0] == 5 / 8  # radical inverse of 101 in base 2


def test_halton_validation():
    with pytest.raises(ValueError):
        halton_point(0, [2])
    with pytest.raises(ValueError):
        halton_point(1, [1])
    with pytest.raises(ValueError):
        halton_point(1, [2, 4])  # not coprime


def test_halton_points_matches_pointwise():
    pts = halton_points(16, 2)
    for s in range(16):
        assert np.allclose(pts[s], halton_point(s + 1, [2, 3]))


# -- priors and batches -------------------------------------------------------


def test_uniform_box_sampling_moments():
    prior = PriorSpec.uniform_box([0.0, 0.0], [1.0, 1.0])
    batch = sample_prior(prior, 1000, seed=9)
    assert batch.draws.shape == (1000, 2)
    assert np.all((batch.draws >= 0) & (batch.draws <= 1))
    # mean of U(0,1) has sd 1/sqrt(12 n) ~ 0.0091; 0.05 is > 5 sigma
    assert np.all(np.abs(batch.draws.mean(axis=0) - 0.5) < 0.05)
    assert np.all(batch.weights == 1.0)


def test_sampling_deterministic_and_prefix_stable():
    prior = PriorSpec.uniform_box([-1.0], [1.0])
    a = sample_prior(prior, 3, seed=1)
    b = sample_prior(prior, 3, seed=1)
    assert np.array_equal(a.draws, b.draws)
    big = sample_prior(prior, 64, seed=1)
    assert np.array_equal(a.draws, big.draws[:3])


def test_degenerate_box_rejected():
    with pytest.raises(ValueError):
        PriorSpec.uniform_box([0.0, 1.0], [1.0, 1.0])


def test_normal_prior_sampling_and_density():
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    prior = PriorSpec.normal([1.0, -1.0], cov)
    batch = sample_prior(prior, 40_000, seed=3)
    assert np.allclose(batch.draws.mean(axis=0), [1.0, -1.0], atol=0.05)
    assert np.allclose(np.cov(batch.draws.T), cov, atol=0.08)
    ref = stats.multivariate_normal(mean=[1.0, -1.0], cov=cov)
    pts = batch.draws[:7]
    assert np.allclose(prior.density(pts), ref.pdf(pts), rtol=1e-10)


def test_product_prior_density_positive_and_normalized_parts():
    prior = PriorSpec.product([Marginal("uniform", 0, 2), Marginal("normal", 0, 1)])
    assert prior.density([1.0, 0.0]) == pytest.approx(0.5 * stats.norm.pdf(0.0))
    assert prior.density([3.0, 0.0]) == 0.0


def test_halton_sampling_requires_product_form():
    full = PriorSpec.normal([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]])
    with pytest.raises(ValueError):
        sample_prior(full, 10, seed=0, method="halton")
    diag = PriorSpec.normal([0.0, 0.0], [[1.0, 0.0], [0.0, 4.0]])
    batch = sample_prior(diag, 512, seed=0, method="halton")
    assert abs(batch.draws[:, 1].std() - 2.0) < 0.2


def test_halton_box_sampling_hits_radical_inverse():
    prior = PriorSpec.uniform_box([0.0], [2.0])
    batch = sample_prior(prior, 4, seed=0, method="halton")
    assert np.allclose(batch.draws[:, 0], [1.0, 0.5, 1.5, 0.25])


# -- importance weights -------------------------------------------------------


def test_importance_weights_cancel():
    prior = PriorSpec.uniform_box([0.0], [1.0])
    batch = sample_prior(prior, 16, seed=2)
    out = importance_weights(batch, prior, prior)
    assert np.allclose(out.weights, 1.0)


def test_importance_weights_pointwise_ratio():
    batch = DrawBatch(np.array([[0.0], [1.0], [2.0]]), np.ones(3), seed=0)
    prop = lambda t: 1.0
    target = lambda t: 2.0 if t[0] == 1.0 else 1.0
    out = importance_weights(batch, prop, target)
    assert out.weights.tolist() == [1.0, 2.0, 1.0]


def test_importance_weights_zero_proposal_rejected():
    batch = DrawBatch(np.array([[0.0], [1.0]]), np.ones(2), seed=0)
    with pytest.raises(ValueError):
        importance_weights(batch, lambda t: 0.0, lambda t: 1.0)


def test_self_normalized_identity():
    # the weighted average under a shifted proposal matches the prior average
    prior = PriorSpec.normal([0.0], [[1.0]])
    proposal = PriorSpec.normal([0.4], [[1.44]])
    S = 100_000
    prop_batch = importance_weights(sample_prior(proposal, S, seed=11), proposal, prior)
    g = np.tanh(prop_batch.draws[:, 0])
    w = prop_batch.weights
    weighted = float(np.sum(w * g) / np.sum(w))
    wn = w / np.sum(w)
    se_w = float(np.sqrt(np.sum(wn**2 * (g - weighted) ** 2)))
    prior_batch = sample_prior(prior, S, seed=12)
    gp = np.tanh(prior_batch.draws[:, 0])
    direct = float(gp.mean())
    se_p = float(gp.std() / np.sqrt(S))
    assert abs(weighted - direct) < 3.0 * np.hypot(se_w, se_p)


# -- adaptive proposal --------------------------------------------------------


def test_adaptive_proposal_construction():
    prop = adaptive_proposal([1.0, 2.0], [0.1, 0.1])
    assert prop.kind == "normal"
    assert np.allclose(prop.mean, [1.0, 2.0])
    assert np.allclose(prop.cov, np.diag([0.01, 0.01]))


def test_adaptive_proposal_concentration():
    prop = adaptive_proposal([1.0, 2.0], [0.1, 0.2])
    batch = sample_prior(prop, 10_000, seed=4)
    inside = np.all(np.abs(batch.draws - [1.0, 2.0]) <= 3 * np.array([0.1, 0.2]), axis=1)
    assert inside.mean() >= 0.99


def test_adaptive_proposal_rejects_bad_scale():
    with pytest.raises(ValueError):
        adaptive_proposal([1.0, 2.0], [0.1, 0.0])


def test_draw_batch_requires_positive_weights():
    with pytest.raises(ValueError):
        DrawBatch(np.zeros((2, 1)), np.array([1.0, 0.0]), seed=0)
