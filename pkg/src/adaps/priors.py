"""Analytic score models and a finite-difference adapter for black-box denoisers.

For Gaussian and Gaussian-mixture priors the VP marginal ``p_t`` is known in
closed form, so the noise prediction, the posterior mean ``E[x0 | x_t]`` and its
Jacobian are exact. These stand in for a trained network.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .errors import ConfigurationError

__all__ = [
    "DenoiseOutput",
    "ScoreModel",
    "GaussianPrior",
    "GMMPrior",
    "BlackboxPrior",
    "register_blackbox",
    "make_prior",
]


@dataclass(frozen=True)
class DenoiseOutput:
    eps: np.ndarray
    x0_hat: np.ndarray


def _check_abar(abar):
    abar = float(abar)
    if not (0.0 < abar <= 1.0):
        raise ConfigurationError(f"alpha_bar must lie in (0, 1], got {abar}")
    return abar


def _as_batch(x, n):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != n:
        raise ConfigurationError(f"expected last dimension {n}, got shape {x.shape}")
    return x.reshape(-1, n), x.shape


class ScoreModel:
    """Common interface: ``eps_theta``, ``x0_vjp`` and the marginal log-density."""

    kind = "base"
    dim: int

    def eps_theta(self, x_t, abar_t) -> DenoiseOutput:
        raise NotImplementedError

    def x0_vjp(self, x_t, abar_t, v):
        raise NotImplementedError

    def marginal_logpdf(self, x_t, abar_t):
        raise NotImplementedError


class GaussianPrior(ScoreModel):
    """``N(mean, diag(var))``; the posterior mean is an affine filter of ``x_t``."""

    kind = "gaussian"

    def __init__(self, mean, var):
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        var = np.broadcast_to(np.asarray(var, dtype=np.float64), mean.shape).copy()
        if np.any(var <= 0) or not np.all(np.isfinite(var)):
            raise ConfigurationError("prior variances must be finite and strictly positive")
        self.mean = mean
        self.var = var
        self.dim = mean.size

    def gain(self, abar_t):
        """Diagonal of ``d x0_hat / d x_t``."""
        abar = _check_abar(abar_t)
        return np.sqrt(abar) * self.var / (abar * self.var + 1.0 - abar)

    def eps_theta(self, x_t, abar_t):
        abar = _check_abar(abar_t)
        x = np.asarray(x_t, dtype=np.float64)
        marg_var = abar * self.var + 1.0 - abar
        score = (np.sqrt(abar) * self.mean - x) / marg_var
        eps = -np.sqrt(1.0 - abar) * score
        x0 = (x + (1.0 - abar) * score) / np.sqrt(abar)
        return DenoiseOutput(eps, x0)

    def x0_vjp(self, x_t, abar_t, v):
        return self.gain(abar_t) * np.asarray(v, dtype=np.float64)

    def marginal_logpdf(self, x_t, abar_t):
        abar = _check_abar(abar_t)
        x = np.asarray(x_t, dtype=np.float64)
        marg_var = abar * self.var + 1.0 - abar
        r = x - np.sqrt(abar) * self.mean
        return -0.5 * np.sum(r**2 / marg_var + np.log(2 * np.pi * marg_var), axis=-1)


class GMMPrior(ScoreModel):
    """Mixture of isotropic Gaussians ``sum_k w_k N(mu_k, s2_k I)``."""

    kind = "gmm"

    def __init__(self, weights, means, variances):
        weights = np.atleast_1d(np.asarray(weights, dtype=np.float64))
        means = np.asarray(means, dtype=np.float64)
        if means.ndim == 1:
            means = means[:, None]
        variances = np.broadcast_to(np.asarray(variances, dtype=np.float64), weights.shape).copy()
        if means.shape[0] != weights.size:
            raise ConfigurationError("need one mean per mixture weight")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ConfigurationError("mixture weights must be positive and sum to 1")
        if np.any(variances <= 0):
            raise ConfigurationError("component variances must be strictly positive")
        self.weights = weights
        self.means = np.ascontiguousarray(means)
        self.variances = variances
        self.log_weights = np.log(weights)
        self.dim = means.shape[1]

    def eps_theta(self, x_t, abar_t):
        abar = _check_abar(abar_t)
        xb, shape = _as_batch(x_t, self.dim)
        eps, x0 = _kernels.gmm_denoise(xb, self.means, self.log_weights, self.variances, abar)
        return DenoiseOutput(eps.reshape(shape), x0.reshape(shape))

    def x0_vjp(self, x_t, abar_t, v):
        abar = _check_abar(abar_t)
        xb, shape = _as_batch(x_t, self.dim)
        vb = np.broadcast_to(np.asarray(v, dtype=np.float64), shape).reshape(-1, self.dim)
        out = _kernels.gmm_x0_vjp(xb, vb, self.means, self.log_weights, self.variances, abar)
        return out.reshape(shape)

    def marginal_logpdf(self, x_t, abar_t):
        abar = _check_abar(abar_t)
        xb, shape = _as_batch(x_t, self.dim)
        out = _kernels.gmm_logpdf(xb, self.means, self.log_weights, self.variances, abar)
        return out.reshape(shape[:-1])


_REGISTRY: dict[str, Callable] = {}


def register_blackbox(name: str, fn: Callable) -> None:
    """Register ``fn(x_t, abar_t) -> eps`` under ``name`` for config-driven lookup."""
    _REGISTRY[name] = fn


class BlackboxPrior(ScoreModel):
    """Wraps any noise predictor; the Jacobian product uses central differences.

    Costs ``2 n`` predictor calls per product, so only suitable for small ``n``.
    """

    kind = "blackbox-adapter"

    def __init__(self, fn: Callable | str, dim: int):
        if isinstance(fn, str):
            if fn not in _REGISTRY:
                raise ConfigurationError(f"no black-box model registered as {fn!r}")
            fn = _REGISTRY[fn]
        self.fn = fn
        self.dim = int(dim)

    def _x0(self, x, abar):
        eps = np.asarray(self.fn(x, abar), dtype=np.float64)
        return (x - np.sqrt(1.0 - abar) * eps) / np.sqrt(abar)

    def eps_theta(self, x_t, abar_t):
        abar = _check_abar(abar_t)
        x = np.asarray(x_t, dtype=np.float64)
        eps = np.asarray(self.fn(x, abar), dtype=np.float64)
        return DenoiseOutput(eps, (x - np.sqrt(1.0 - abar) * eps) / np.sqrt(abar))

    def x0_vjp(self, x_t, abar_t, v):
        abar = _check_abar(abar_t)
        xb, shape = _as_batch(x_t, self.dim)
        vb = np.broadcast_to(np.asarray(v, dtype=np.float64), shape).reshape(-1, self.dim)
        out = np.empty_like(xb)
        h = 1e-4 * (1.0 + np.abs(xb).max(axis=1, keepdims=True))
        for j in range(self.dim):
            step = np.zeros_like(xb)
            step[:, j] = h[:, 0]
            col = (self._x0(xb + step, abar) - self._x0(xb - step, abar)) / (2 * h)
            out[:, j] = np.einsum("bi,bi->b", col, vb)
        return out.reshape(shape)

    def marginal_logpdf(self, x_t, abar_t):
        raise NotImplementedError("black-box models do not expose a density")


def make_prior(kind: str, **params) -> ScoreModel:
    if kind == "gaussian":
        return GaussianPrior(params["mean"], params["var"])
    if kind == "gmm":
        return GMMPrior(params["weights"], params["means"], params["variances"])
    if kind in ("blackbox", "blackbox-adapter"):
        return BlackboxPrior(params["name"], params["dim"])
    raise ConfigurationError(f"unknown prior kind {kind!r}")
