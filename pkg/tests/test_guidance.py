import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from adaps.errors import ConfigurationError
from adaps.guidance import (
    GuidanceSpec,
    adaptive_xi,
    guidance_step,
    map_estimate,
    surrogate_dps,
    surrogate_map_residual,
    surrogate_pgdm,
)
from adaps.nonlinear import TanhOperator
from adaps.operators import DenseOperator, IdentityOperator
from adaps.priors import BlackboxPrior, GaussianPrior, GMMPrior, register_blackbox

from conftest import fd_jacobian

# d_t coefficient for identity A, sigma_y^2/r^2 = 1, abar = 0.25, from 30-digit arithmetic
DT_COEF = 0.288675134594812882


def _instance(rng, n=4, m=3):
    prior = GMMPrior([0.3, 0.7], rng.normal(0, 1, (2, n)), [0.4, 0.2])
    op = DenseOperator(rng.standard_normal((m, n)))
    return prior, op, rng.standard_normal(m), rng.standard_normal(n)


def test_surrogates_vanish_on_consistent_measurement(rng):
    prior, op, _, x = _instance(rng)
    abar = 0.4
    y = op.apply(prior.eps_theta(x, abar).x0_hat)
    for fn in (surrogate_dps, surrogate_pgdm):
        np.testing.assert_allclose(fn(prior, op, y, 0.1, x, abar), 0.0, atol=1e-13)
    x0 = prior.eps_theta(x, abar).x0_hat
    np.testing.assert_allclose(surrogate_map_residual(op, y, 0.1, x0, abar), 0.0, atol=1e-13)


def test_dps_standard_normal_identity(rng):
    # x0_hat = sqrt(abar) x and J = sqrt(abar) I, so DPS = abar sqrt(abar) (sqrt(abar) x - y)
    p = GaussianPrior(np.zeros(3), 1.0)
    x, y = rng.standard_normal(3), rng.standard_normal(3)
    a = 0.36
    got = surrogate_dps(p, IdentityOperator(3), y, 0.1, x, a)
    np.testing.assert_allclose(got, a * np.sqrt(a) * (np.sqrt(a) * x - y), atol=1e-14)


def test_dps_is_scaled_data_term_gradient(rng):
    prior, op, y, x = _instance(rng)
    abar = 0.55
    grad = fd_jacobian(
        lambda z: np.array([0.5 * np.sum((op.apply(prior.eps_theta(z, abar).x0_hat) - y) ** 2)]), x
    )[0]
    np.testing.assert_allclose(surrogate_dps(prior, op, y, 0.1, x, abar), abar * grad, atol=1e-4)


def test_pgdm_noiseless_identity(rng):
    prior = GMMPrior([0.5, 0.5], rng.normal(0, 1, (2, 3)), [0.3, 0.6])
    x, y = rng.standard_normal(3), rng.standard_normal(3)
    abar = 0.3
    x0 = prior.eps_theta(x, abar).x0_hat
    ref = abar / (1 - abar) * prior.x0_vjp(x, abar, x0 - y)
    np.testing.assert_allclose(surrogate_pgdm(prior, IdentityOperator(3), y, 0.0, x, abar), ref, atol=1e-14)


def test_pgdm_matches_dense_reimplementation(rng):
    prior = GMMPrior([0.3, 0.7], [-1.5, 1.0], [0.25, 0.16])
    A = rng.standard_normal((3, 1))
    y = rng.standard_normal(3)
    x = np.array([0.4])
    abar, s = 0.45, 0.2
    r2 = 1 - abar
    x0 = prior.eps_theta(x, abar).x0_hat
    J = fd_jacobian(lambda z: prior.eps_theta(z, abar).x0_hat, x)  # 1x1, symmetric
    inner = np.linalg.solve(A @ A.T + s**2 / r2 * np.eye(3), A @ x0 - y)
    ref = abar / r2 * (J.T @ (A.T @ inner))
    got = surrogate_pgdm(prior, DenseOperator(A), y, s, x, abar)
    np.testing.assert_allclose(got, ref, rtol=1e-8)


def test_pgdm_rejects_nonlinear(rng):
    with pytest.raises(ConfigurationError):
        surrogate_pgdm(GaussianPrior(np.zeros(2), 1.0), TanhOperator(2), np.zeros(2), 0.1, np.ones(2), 0.5)


def test_map_residual_scalar_example(rng):
    x0, y = rng.standard_normal(4), rng.standard_normal(4)
    abar = 0.25
    sigma_y = np.sqrt(1 - abar)  # sigma_y^2 / r^2 = 1
    d = surrogate_map_residual(IdentityOperator(4), y, sigma_y, x0, abar)
    np.testing.assert_allclose(d, DT_COEF * (x0 - y), rtol=1e-14)


def test_map_residual_consistent_with_x0_star(rng):
    _, op, y, x0 = _instance(rng)
    abar = 0.7
    x_star = map_estimate(op, y, 0.2, x0, 1 - abar)
    d = surrogate_map_residual(op, y, 0.2, x0, abar)
    np.testing.assert_allclose(d, np.sqrt(abar / (1 - abar)) * (x0 - x_star), atol=1e-10)


def test_map_estimate_equal_weights(rng):
    x0, y = rng.standard_normal(5), rng.standard_normal(5)
    np.testing.assert_allclose(map_estimate(IdentityOperator(5), y, 0.5, x0, 0.25), (x0 + y) / 2, atol=1e-15)


def test_map_estimate_prior_dominates(rng):
    _, op, y, x0 = _instance(rng)
    x_star = map_estimate(op, y, 1e6, x0, 1.0)  # lambda = 1e12
    np.testing.assert_allclose(x_star, x0, atol=1e-6)


def test_map_estimate_primal_form(rng):
    A = rng.standard_normal((6, 10))
    y, x0 = rng.standard_normal(6), rng.standard_normal(10)
    s, r2 = 0.3, 0.6
    lam = s**2 / r2
    primal = np.linalg.solve(A.T @ A + lam * np.eye(10), A.T @ y + lam * x0)
    np.testing.assert_allclose(map_estimate(DenseOperator(A), y, s, x0, r2), primal, atol=1e-10)


def test_map_estimate_minimizes_phi(rng):
    _, op, y, x0 = _instance(rng)
    s, r2 = 0.3, 0.5
    x_star = map_estimate(op, y, s, x0, r2)
    grad = op.adjoint(op.apply(x_star) - y) / s**2 + (x_star - x0) / r2
    np.testing.assert_allclose(grad, 0.0, atol=1e-10)


def test_adaptive_xi_examples():
    g = np.array([0.3, -1.2, 2.0])
    assert adaptive_xi(g, g) == 2.0
    assert adaptive_xi(np.array([1.0, 0.0]), np.array([0.0, 3.0])) == 0.0
    assert adaptive_xi(np.array([3.0, 0.0]), np.array([1.0, 1.0])) == 3.0
    assert adaptive_xi(g, np.zeros(3)) == 0.0


def test_adaptive_xi_batched():
    d = np.array([[1.0, 0.0], [2.0, 2.0], [1.0, 1.0]])
    g = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
    np.testing.assert_array_equal(adaptive_xi(d, g), [2.0, 4.0, 0.0])


@settings(max_examples=200, deadline=None)
@given(
    d=st.lists(st.floats(-100, 100), min_size=3, max_size=3),
    g=st.lists(st.floats(-100, 100), min_size=3, max_size=3),
    c=st.floats(1e-3, 1e3),
)
def test_adaptive_update_scale_invariant(d, g, c):
    d, g = np.array(d), np.array(g)
    assume(np.isfinite(adaptive_xi(d, g)) and np.isfinite(adaptive_xi(d, c * g)))
    u1 = adaptive_xi(d, g) * g
    u2 = adaptive_xi(d, c * g) * (c * g)
    np.testing.assert_allclose(u1, u2, rtol=1e-12, atol=1e-12 * (1 + np.abs(u1).max()))


@settings(max_examples=200, deadline=None)
@given(
    d=st.lists(st.floats(-10, 10), min_size=2, max_size=4),
    delta=st.floats(-1, 1),
    seed=st.integers(0, 1000),
)
def test_half_xi_is_least_squares_coefficient(d, delta, seed):
    d = np.array(d)
    g = np.random.default_rng(seed).standard_normal(d.size)
    c = 0.5 * adaptive_xi(d, g)
    base = np.sum((d - c * g) ** 2)
    assert np.sum((d - (c + delta) * g) ** 2) >= base - 1e-12 * (1 + base)


def _setup(rng):
    prior = GMMPrior([0.5, 0.5], rng.normal(0, 1, (2, 4)), [0.3, 0.5])
    op = DenseOperator(rng.standard_normal((2, 4)))
    return prior, op, rng.standard_normal(2), rng.standard_normal((5, 4))


def test_self_pair_doubles_d(rng):
    prior, op, y, x = _setup(rng)
    st_ = guidance_step(GuidanceSpec(g_kind="map", d_kind="map"), prior, op, y, 0.1, x, 0.5)
    np.testing.assert_allclose(st_.update, 2 * st_.d, rtol=1e-12)
    np.testing.assert_allclose(st_.xi, 2 * np.linalg.norm(st_.d, axis=-1), rtol=1e-12)
    np.testing.assert_allclose(st_.alignment, 1.0, rtol=1e-12)


def test_fixed_one_uses_normalized_g(rng):
    prior, op, y, x = _setup(rng)
    st_ = guidance_step(GuidanceSpec.from_mode("fixed:1"), prior, op, y, 0.1, x, 0.5)
    np.testing.assert_allclose(np.linalg.norm(st_.update, axis=-1), 1.0, rtol=1e-12)
    np.testing.assert_array_equal(st_.update, st_.g)


def test_orthogonal_pair_is_gated_off():
    # denoiser x0_hat = c R x with R a quarter turn: DPS follows R^T (x0_hat - y),
    # which is orthogonal to the MAP residual along x0_hat - y
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    abar, c = 0.5, 0.8
    register_blackbox("quarter-turn", lambda x, a: (x - np.sqrt(a) * (c * x @ R.T)) / np.sqrt(1 - a))
    prior = BlackboxPrior("quarter-turn", 2)
    x, y = np.array([0.3, -1.1]), np.array([1.0, 0.5])
    st_ = guidance_step(GuidanceSpec(g_kind="dps"), prior, IdentityOperator(2), y, 0.1, x, abar)
    assert abs(st_.alignment) < 1e-8
    np.testing.assert_allclose(st_.update, 0.0, atol=1e-8)


def test_adaptive_with_unaligned_surrogates(rng):
    prior, op, y, x = _setup(rng)
    spec = GuidanceSpec()
    st_ = guidance_step(spec, prior, op, y, 0.1, x, 0.3)
    g_hat = st_.g
    ref = np.maximum(2 * np.einsum("bi,bi->b", st_.d, g_hat), 0)
    np.testing.assert_allclose(st_.xi, ref, rtol=1e-12)
    np.testing.assert_allclose(st_.update, ref[:, None] * g_hat, rtol=1e-12)
    assert np.all(np.abs(st_.alignment) <= 1 + 1e-12)


def test_negative_xi_clamped_unless_allowed(rng):
    prior, op, y, x = _setup(rng)
    raw = guidance_step(GuidanceSpec(allow_negative_xi=True), prior, op, y, 0.1, x, 0.3)
    clamped = guidance_step(GuidanceSpec(), prior, op, y, 0.1, x, 0.3)
    np.testing.assert_allclose(clamped.xi, np.maximum(raw.xi, 0.0))


def test_averaged_mode(rng):
    prior, op, y, x = _setup(rng)
    st_ = guidance_step(GuidanceSpec.from_mode("averaged"), prior, op, y, 0.1, x, 0.3)
    np.testing.assert_allclose(st_.update, 0.5 * (st_.g + st_.d))


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        GuidanceSpec(g_kind="tweedie")
    with pytest.raises(ConfigurationError):
        GuidanceSpec(xi_mode="greedy")
    with pytest.raises(ConfigurationError):
        GuidanceSpec.from_mode("fixed")
    with pytest.raises(ConfigurationError):
        GuidanceSpec(xi_value=float("nan"))
    assert GuidanceSpec.from_mode("fixed:2").label == "fixed:2"


def test_guidance_needs_open_abar(rng):
    prior, op, y, x = _setup(rng)
    with pytest.raises(ConfigurationError):
        guidance_step(GuidanceSpec(), prior, op, y, 0.1, x, 1.0)
