import numpy as np
import pytest

from adaps.errors import ConfigurationError, ResolutionError
from adaps.guidance import map_estimate
from adaps.operators import DenseOperator
from adaps.oracle import (
    QuadraturePosterior,
    exact_eps_star,
    exact_posterior_mean,
    gaussian_posterior,
    quadrature_posterior,
    wasserstein1_1d,
)
from adaps.priors import GaussianPrior, GMMPrior


def test_equal_precision_average(rng):
    mu0, y = rng.standard_normal(3), rng.standard_normal(3)
    post = gaussian_posterior(mu0, 0.04, np.eye(3), y, 0.2)
    np.testing.assert_allclose(post.mean, (mu0 + y) / 2, atol=1e-14)
    np.testing.assert_allclose(post.cov, 0.02 * np.eye(3), atol=1e-15)


def test_uninformative_likelihood(rng):
    mu0, var0 = rng.standard_normal(4), rng.uniform(0.5, 2, 4)
    post = gaussian_posterior(mu0, var0, rng.standard_normal((2, 4)), rng.standard_normal(2), 1e9)
    np.testing.assert_allclose(post.mean, mu0, atol=1e-6)
    np.testing.assert_allclose(post.cov, np.diag(var0), atol=1e-6)


def test_posterior_mean_is_stationary(rng):
    A = rng.standard_normal((4, 6))
    y, mu0 = rng.standard_normal(4), rng.standard_normal(6)
    post = gaussian_posterior(mu0, 0.7, A, y, 0.3)
    grad = A.T @ (A @ post.mean - y) / 0.09 + (post.mean - mu0) / 0.7
    assert np.abs(grad).max() <= 1e-8
    # same point from the measurement-space MAP formula with r^2 = prior variance
    np.testing.assert_allclose(map_estimate(DenseOperator(A), y, 0.3, mu0, 0.7), post.mean, atol=1e-10)


def test_sigma_zero_rejected():
    with pytest.raises(ConfigurationError):
        gaussian_posterior([0.0], [1.0], [[1.0]], [0.0], 0.0)


def test_closed_form_and_quadrature_agree(rng):
    prior = GaussianPrior([0.3, -0.2], [0.8, 1.5])
    A = rng.standard_normal((1, 2))
    y = rng.standard_normal(1)
    x_t = rng.standard_normal(2)
    a = exact_posterior_mean(prior, A, y, 0.3, x_t, 0.4, method="closed-form")
    b = exact_posterior_mean(prior, A, y, 0.3, x_t, 0.4, method="quadrature")
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_eps_star_without_measurement_information(rng):
    prior = GMMPrior([0.4, 0.6], [-1.0, 1.2], [0.3, 0.2])
    x_t = np.array([0.35])
    got = exact_eps_star(prior, [[1.0]], [0.0], 1e9, x_t, 0.5)
    np.testing.assert_allclose(got, prior.eps_theta(x_t, 0.5).eps, atol=1e-6)


def test_near_clean_limit_is_augmented_posterior(rng):
    prior = GaussianPrior(rng.standard_normal(3), rng.uniform(0.5, 2, 3))
    A = rng.standard_normal((2, 3))
    y, x_t = rng.standard_normal(2), rng.standard_normal(3)
    abar = 1 - 1e-8
    got = exact_posterior_mean(prior, A, y, 0.2, x_t, abar)
    # x_t observed as sqrt(abar) x0 + N(0, 1 - abar); stack it with y after whitening
    aug_A = np.vstack([A / 0.2, np.sqrt(abar) * np.eye(3) / np.sqrt(1 - abar)])
    aug_y = np.concatenate([y / 0.2, x_t / np.sqrt(1 - abar)])
    ref = gaussian_posterior(prior.mean, prior.var, aug_A, aug_y, 1.0).mean
    np.testing.assert_allclose(got, ref, atol=1e-6)


def test_quadrature_gaussian_moments(rng):
    prior = GaussianPrior([0.5], [2.0])
    post = quadrature_posterior(prior, [[1.5]], [0.7], 0.4)
    ref = gaussian_posterior([0.5], [2.0], [[1.5]], [0.7], 0.4)
    assert post.weights.sum() == pytest.approx(1.0, abs=1e-10)
    assert post.mean()[0] == pytest.approx(ref.mean[0], abs=1e-6)
    assert post.std() == pytest.approx(np.sqrt(ref.cov[0, 0]), rel=1e-6)


def test_quadrature_2d_marginals():
    prior = GMMPrior([0.5, 0.5], [[-1, -1], [1, 1]], [0.2, 0.2])
    post = quadrature_posterior(prior, [[0.5, 0.2]], [0.1], 0.1)
    assert post.ndim == 2 and post.weights.shape == (256, 256)
    m = post.marginal(1)
    assert m.weights.sum() == pytest.approx(1.0, abs=1e-10)
    assert m.mean()[0] == pytest.approx(post.mean()[1], abs=1e-12)


def test_quadrature_resolution_error():
    prior = GaussianPrior([0.0], [1.0])
    # posterior far narrower than the grid spacing
    with pytest.raises(ResolutionError):
        quadrature_posterior(prior, [[1.0]], [0.3], 1e-12)


def test_w1_self_distance():
    prior = GMMPrior([0.3, 0.7], [-1.5, 1.0], [0.25, 0.16])
    post = quadrature_posterior(prior, [[0.3]], [0.2], 0.1)
    draws = post.sample(100_000, np.random.default_rng(0))
    assert wasserstein1_1d(draws, post) <= 0.01 * post.std()


def test_w1_point_masses_and_shift():
    nodes = np.linspace(-1, 1, 201)
    w = np.zeros(201)
    w[100] = 1.0
    point = QuadraturePosterior((nodes,), w)
    assert wasserstein1_1d(np.full(500, 0.37), point) == pytest.approx(0.37, abs=1e-12)
    g = np.exp(-0.5 * (nodes / 0.2) ** 2)
    base = QuadraturePosterior((nodes,), g / g.sum())
    shifted = QuadraturePosterior((nodes + 0.25,), g / g.sum())
    draws = base.sample(200_000, np.random.default_rng(1))
    w_base = wasserstein1_1d(draws, base)
    assert wasserstein1_1d(draws, shifted) == pytest.approx(0.25, abs=w_base + 2e-3)


def test_w1_needs_samples():
    post = QuadraturePosterior((np.linspace(0, 1, 11),), np.full(11, 1 / 11))
    with pytest.raises(ConfigurationError):
        wasserstein1_1d(np.zeros(99), post)
