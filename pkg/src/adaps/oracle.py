"""Ground-truth posteriors used to check the sampler.

Everything here uses dense linear algebra and its own density code. It never
calls the operator backends, the guidance surrogates or the priors' score
routines, so it stays an independent reference for them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalError, ResolutionError
from .priors import GaussianPrior, GMMPrior

__all__ = [
    "GaussianPosterior",
    "QuadraturePosterior",
    "gaussian_posterior",
    "quadrature_posterior",
    "exact_posterior_mean",
    "exact_eps_star",
    "wasserstein1_1d",
]

NODES_1D = 4096
NODES_2D = 256
SPAN_STD = 8.0
EDGE_TOL = 1e-8
WIDEN_TRIES = 3


def _dense(A):
    matrix = getattr(A, "matrix", None)
    if matrix is not None:
        return np.asarray(matrix, dtype=np.float64)
    if hasattr(A, "to_dense"):
        # only reached for structured operators; tests pass explicit matrices
        return A.to_dense()
    return np.atleast_2d(np.asarray(A, dtype=np.float64))


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    cov: np.ndarray


def _chol_inverse(P):
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("posterior precision is not positive definite") from exc
    Linv = np.linalg.solve(L, np.eye(P.shape[0]))
    return Linv.T @ Linv


def gaussian_posterior(mu0, var0, A, y, sigma_y) -> GaussianPosterior:
    """Conjugate posterior for ``N(mu0, diag(var0))`` prior and ``y = A x + N(0, sigma_y^2 I)``."""
    if sigma_y <= 0:
        raise ConfigurationError("gaussian_posterior needs sigma_y > 0")
    A = _dense(A)
    mu0 = np.atleast_1d(np.asarray(mu0, dtype=np.float64))
    var0 = np.broadcast_to(np.asarray(var0, dtype=np.float64), mu0.shape)
    P = np.diag(1.0 / var0) + A.T @ A / sigma_y**2
    cov = _chol_inverse(P)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (mu0 / var0 + A.T @ np.asarray(y, dtype=np.float64) / sigma_y**2)
    return GaussianPosterior(mean, cov)


@dataclass(frozen=True)
class QuadraturePosterior:
    """Normalized weights on a tensor grid (1-D or 2-D)."""

    axes: tuple
    weights: np.ndarray

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def nodes(self) -> np.ndarray:
        if self.ndim == 1:
            return self.axes[0]
        g = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([a.ravel() for a in g], axis=-1)

    def mean(self) -> np.ndarray:
        return np.array([self.marginal(i).axes[0] @ self.marginal(i).weights for i in range(self.ndim)])

    def cov(self) -> np.ndarray:
        X = self.nodes.reshape(-1, self.ndim)
        w = self.weights.ravel()
        mu = w @ X
        D = X - mu
        return (D * w[:, None]).T @ D

    def std(self) -> float:
        if self.ndim != 1:
            raise ConfigurationError("std is defined for 1-D posteriors; use cov()")
        return float(np.sqrt(self.cov()[0, 0]))

    def marginal(self, axis: int) -> "QuadraturePosterior":
        if self.ndim == 1:
            return self
        other = tuple(i for i in range(self.ndim) if i != axis)
        return QuadraturePosterior((self.axes[axis],), self.weights.sum(axis=other))

    def sample(self, size, rng) -> np.ndarray:
        """Inverse-CDF draws from a 1-D posterior, jittered uniformly within a grid cell."""
        if self.ndim != 1:
            raise ConfigurationError("sampling is implemented for 1-D posteriors")
        nodes = self.axes[0]
        h = nodes[1] - nodes[0] if nodes.size > 1 else 0.0
        idx = rng.choice(nodes.size, size=size, p=self.weights)
        return nodes[idx] + h * (rng.random(size) - 0.5)


def _prior_logpdf(prior, X):
    """Log prior density at points ``X`` of shape ``(P, n)``, from the prior's parameters."""
    if isinstance(prior, GaussianPrior):
        r = X - prior.mean
        return -0.5 * np.sum(r**2 / prior.var + np.log(2 * np.pi * prior.var), axis=-1)
    if isinstance(prior, GMMPrior):
        n = X.shape[-1]
        comps = []
        for w, mu, s2 in zip(prior.weights, prior.means, prior.variances):
            r = X - mu
            comps.append(np.log(w) - 0.5 * n * np.log(2 * np.pi * s2) - 0.5 * np.sum(r**2, axis=-1) / s2)
        comps = np.stack(comps)
        top = comps.max(axis=0)
        return top + np.log(np.exp(comps - top).sum(axis=0))
    raise ConfigurationError(f"no oracle density for prior kind {getattr(prior, 'kind', prior)!r}")


def _prior_box(prior):
    if isinstance(prior, GaussianPrior):
        sd = np.sqrt(prior.var)
        return prior.mean - 12 * sd, prior.mean + 12 * sd
    sd = np.sqrt(prior.variances.max())
    return prior.means.min(axis=0) - 12 * sd, prior.means.max(axis=0) + 12 * sd


def _log_post(prior, A, y, sigma_y, x_t, abar, X):
    lp = _prior_logpdf(prior, X)
    if A is not None and sigma_y is not None and np.isfinite(sigma_y):
        r = X @ A.T - y
        lp = lp - 0.5 * np.sum(r**2, axis=-1) / sigma_y**2
    if x_t is not None:
        r = x_t - np.sqrt(abar) * X
        lp = lp - 0.5 * np.sum(r**2, axis=-1) / (1.0 - abar)
    return lp


def _trapezoid(n):
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def quadrature_posterior(prior, A=None, y=None, sigma_y=None, x_t=None, abar_t=None, nodes=None, passes=3):
    """Grid posterior of ``x0`` given ``y`` and optionally ``x_t`` for 1-D/2-D priors.

    A broad grid over the prior is refined to ``mean +- 8 std`` of the
    posterior on each pass. The last window is widened while its edges carry
    mass above ``EDGE_TOL``; ``ResolutionError`` if that does not help.
    """
    dim = prior.dim
    if dim not in (1, 2):
        raise ConfigurationError("quadrature posteriors support 1-D and 2-D signals only")
    if nodes is None:
        nodes = NODES_1D if dim == 1 else NODES_2D
    A = None if A is None else _dense(A)
    y = None if y is None else np.atleast_1d(np.asarray(y, dtype=np.float64))
    if x_t is not None:
        x_t = np.atleast_1d(np.asarray(x_t, dtype=np.float64))
        if not (0.0 < abar_t < 1.0):
            raise ConfigurationError("conditioning on x_t needs 0 < abar_t < 1")
    lo, hi = _prior_box(prior)
    if x_t is not None:
        centre = x_t / np.sqrt(abar_t)
        lo = np.minimum(lo, centre - 12 * np.sqrt((1 - abar_t) / abar_t))
        hi = np.maximum(hi, centre + 12 * np.sqrt((1 - abar_t) / abar_t))
    first = max(nodes, 16384) if dim == 1 else max(nodes, 512)

    def evaluate(lo, hi, count):
        axes = tuple(np.linspace(lo[i], hi[i], count) for i in range(dim))
        if dim == 1:
            X = axes[0][:, None]
            tw = _trapezoid(count)
        else:
            g = np.meshgrid(*axes, indexing="ij")
            X = np.stack([a.ravel() for a in g], axis=-1)
            tw = np.outer(_trapezoid(count), _trapezoid(count)).ravel()
        lp = _log_post(prior, A, y, sigma_y, x_t, abar_t, X)
        w = tw * np.exp(lp - lp.max())
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            raise ResolutionError("posterior grid carries no mass")
        return QuadraturePosterior(axes, (w / total).reshape((count,) * dim))

    def edge_mass(post):
        edge = 0.0
        for i in range(dim):
            m = post.marginal(i).weights
            k = max(1, m.size // 100)
            edge = max(edge, m[:k].sum() + m[-k:].sum())
        return edge

    post = None
    for p in range(passes):
        post = evaluate(lo, hi, first if p == 0 else nodes)
        mean = post.mean()
        sd = np.sqrt(np.diag(post.cov()))
        if np.any(sd <= 0):
            raise ResolutionError("posterior is narrower than the grid spacing")
        lo, hi = mean - SPAN_STD * sd, mean + SPAN_STD * sd
    # skewed or multimodal posteriors can put tail mass beyond +-8 std
    span = SPAN_STD
    edge = edge_mass(post)
    for _ in range(WIDEN_TRIES):
        if edge <= EDGE_TOL:
            break
        span *= 1.5
        post = evaluate(mean - span * sd, mean + span * sd, nodes)
        edge = edge_mass(post)
    if edge > EDGE_TOL:
        raise ResolutionError(f"grid edges carry posterior mass {edge:.2e}")
    return post


def exact_posterior_mean(prior, A, y, sigma_y, x_t, abar_t, method="auto"):
    """``E[x0 | x_t, y]`` for one or a batch of ``x_t`` rows."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if method == "auto":
        method = "closed-form" if isinstance(prior, GaussianPrior) else "quadrature"
    A_d = _dense(A)
    if method == "closed-form":
        if not isinstance(prior, GaussianPrior):
            raise ConfigurationError("closed-form conditional mean needs a Gaussian prior")
        n = prior.dim
        data_prec = A_d.T @ A_d / sigma_y**2 if np.isfinite(sigma_y) else 0.0
        data_lin = A_d.T @ np.asarray(y) / sigma_y**2 if np.isfinite(sigma_y) else 0.0
        P = np.diag(1.0 / prior.var) + (abar_t / (1.0 - abar_t)) * np.eye(n) + data_prec
        b = prior.mean / prior.var + data_lin + np.sqrt(abar_t) / (1.0 - abar_t) * x_t
        return np.linalg.solve(P, b.T).T
    if method != "quadrature":
        raise ConfigurationError(f"unknown method {method!r}")
    rows = x_t.reshape(-1, prior.dim)
    out = np.empty_like(rows)
    for i, row in enumerate(rows):
        post = quadrature_posterior(prior, A_d, y, sigma_y, row, abar_t)
        out[i] = post.mean()
    return out.reshape(x_t.shape)


def exact_eps_star(prior, A, y, sigma_y, x_t, abar_t, method="auto"):
    """``E[eps | x_t, y] = (x_t - sqrt(abar) E[x0 | x_t, y]) / sqrt(1 - abar)``."""
    if not (0.0 < abar_t < 1.0):
        raise ConfigurationError("abar_t must lie in (0, 1)")
    x0 = exact_posterior_mean(prior, A, y, sigma_y, x_t, abar_t, method)
    return (np.asarray(x_t) - np.sqrt(abar_t) * x0) / np.sqrt(1.0 - abar_t)


def wasserstein1_1d(samples, posterior: QuadraturePosterior) -> float:
    """W1 between the empirical distribution of ``samples`` and a 1-D grid posterior."""
    s = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    if s.size < 100:
        raise ConfigurationError(f"need at least 100 samples, got {s.size}")
    if posterior.ndim != 1:
        raise ConfigurationError("W1 is computed against a 1-D posterior; pass a marginal")
    nodes = posterior.axes[0]
    cw = np.cumsum(posterior.weights)
    cw /= cw[-1]
    pts = np.union1d(s, nodes)
    f_emp = np.searchsorted(s, pts, side="right") / s.size
    f_q = np.concatenate(([0.0], cw))[np.searchsorted(nodes, pts, side="right")]
    return float(np.sum(np.abs(f_emp - f_q)[:-1] * np.diff(pts)))
