"""Nonlinear measurement operators and the scalar Gauss-Newton MAP solver.

The solver minimizes

    phi(x) = |A(x) - y|^2 / (2 sigma_y^2) + |x - x0_hat|^2 / (2 r^2)

with steps ``x <- x - grad / (h_tot + damping)``, where the data curvature is
collapsed to the scalar ``h_d = sigma_y^2 |g_d|^2 / |r|^2``. Rows of a batch
are solved independently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, NumericalError
from .operators import CirculantOperator, LinearOperator

__all__ = [
    "NonlinearOperator",
    "LinearAsNonlinear",
    "TanhOperator",
    "SquaredBlurOperator",
    "GNConfig",
    "GNResult",
    "nl_objective",
    "nl_gradient",
    "scalar_curvature",
    "nl_map_estimate",
    "nl_residual_dt",
    "make_nonlinear_operator",
]


class NonlinearOperator:
    """Differentiable map ``x -> A(x)`` with a vector-Jacobian product."""

    has_vjp = True

    def __init__(self, forward: Callable, vjp: Callable, in_dim: int, out_dim: int):
        self._forward = forward
        self._vjp = vjp
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)

    def forward(self, x):
        return np.asarray(self._forward(np.asarray(x, dtype=np.float64)), dtype=np.float64)

    apply = forward

    def vjp(self, x, v):
        """``J(x)^T v``."""
        return np.asarray(self._vjp(np.asarray(x, dtype=np.float64), np.asarray(v, dtype=np.float64)))


class LinearAsNonlinear(NonlinearOperator):
    def __init__(self, op: LinearOperator):
        self.linear = op
        super().__init__(op.apply, lambda x, v: op.adjoint(v), op.in_dim, op.out_dim)


class TanhOperator(NonlinearOperator):
    """Componentwise ``x + a tanh(b x)``; invertible for ``a b > -1``."""

    def __init__(self, n: int, a: float = 0.5, b: float = 1.0):
        if a * b <= -1:
            raise ConfigurationError("x + a tanh(b x) is not monotone for a b <= -1")
        self.a = float(a)
        self.b = float(b)

        def fwd(x):
            return x + self.a * np.tanh(self.b * x)

        def vjp(x, v):
            return v * (1.0 + self.a * self.b / np.cosh(self.b * x) ** 2)

        super().__init__(fwd, vjp, n, n)


class SquaredBlurOperator(NonlinearOperator):
    """``(H x)^2`` elementwise after a circulant blur ``H``."""

    def __init__(self, blur: CirculantOperator):
        self.blur = blur

        def fwd(x):
            return blur.apply(x) ** 2

        def vjp(x, v):
            return blur.adjoint(2.0 * blur.apply(x) * v)

        super().__init__(fwd, vjp, blur.in_dim, blur.out_dim)


@dataclass(frozen=True)
class GNConfig:
    iterations: int = 5
    damping: float = 1e-3
    residual_floor: float = 1e-12
    max_halvings: int = 8

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigurationError("Gauss-Newton needs at least one iteration")
        if self.damping <= 0:
            raise ConfigurationError("damping must be > 0")
        if self.residual_floor <= 0:
            raise ConfigurationError("residual floor must be > 0")


@dataclass
class GNResult:
    x: np.ndarray
    objective: np.ndarray  # (K + 1, B) objective after every iteration
    accepted: np.ndarray  # (K, B) whether the iteration moved


def _rows(a):
    return np.einsum("...i,...i->...", a, a)


def nl_objective(op, y, sigma_y, x0_hat, r_sq, x):
    r = op.forward(x) - y
    return 0.5 * _rows(r) / sigma_y**2 + 0.5 * _rows(x - x0_hat) / r_sq


def nl_gradient(op, y, sigma_y, x0_hat, r_sq, x):
    """Return ``(grad phi, g_d, r)`` at ``x``."""
    r = op.forward(x) - y
    g_d = op.vjp(x, r) / sigma_y**2
    return g_d + (x - x0_hat) / r_sq, g_d, r


def scalar_curvature(g_d, r, sigma_y, residual_floor=1e-12):
    """Isotropic data curvature ``sigma_y^2 |g_d|^2 / max(|r|^2, floor)``."""
    return sigma_y**2 * _rows(g_d) / np.maximum(_rows(r), residual_floor)


def nl_map_estimate(op, y, sigma_y, x0_hat, r_sq, cfg: GNConfig = GNConfig(), return_result=False):
    """Damped scalar Gauss-Newton from ``x0_hat``, with step halving on ascent.

    The plain update is always tried first; it is halved up to
    ``cfg.max_halvings`` times while the objective increases, and the row stays
    put if no halving decreases it.
    """
    if sigma_y <= 0:
        raise ConfigurationError("the nonlinear MAP solver needs sigma_y > 0")
    if r_sq <= 0:
        raise ConfigurationError("r_sq must be > 0")
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    x = x0_hat.copy()
    phi = nl_objective(op, y, sigma_y, x0_hat, r_sq, x)
    history = [np.atleast_1d(phi).copy()]
    accepted = []
    for k in range(cfg.iterations):
        grad, g_d, r = nl_gradient(op, y, sigma_y, x0_hat, r_sq, x)
        h_tot = scalar_curvature(g_d, r, sigma_y, cfg.residual_floor) + 1.0 / r_sq
        step = grad / (h_tot + cfg.damping)[..., None]
        if not np.all(np.isfinite(step)):
            raise NumericalError("non-finite Gauss-Newton step", iteration=k)
        scale = np.ones(np.shape(phi))
        cand = x - step
        cand_phi = nl_objective(op, y, sigma_y, x0_hat, r_sq, cand)
        worse = ~(cand_phi <= phi)
        for _ in range(cfg.max_halvings):
            if not np.any(worse):
                break
            scale = np.where(worse, 0.5 * scale, scale)
            cand = np.where(worse[..., None], x - scale[..., None] * step, cand)
            cand_phi = np.where(worse, nl_objective(op, y, sigma_y, x0_hat, r_sq, cand), cand_phi)
            worse = ~(cand_phi <= phi)
        ok = ~worse
        x = np.where(ok[..., None], cand, x)
        phi = np.where(ok, cand_phi, phi)
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite Gauss-Newton iterate", iteration=k)
        history.append(np.atleast_1d(phi).copy())
        accepted.append(np.atleast_1d(ok).copy())
    if return_result:
        return GNResult(x, np.array(history), np.array(accepted))
    return x


def nl_residual_dt(op, y, sigma_y, x0_hat, abar_t, cfg: GNConfig = GNConfig()):
    """Noise-space displacement ``sqrt(abar)/sqrt(1-abar) (x0_hat - x0*)``."""
    abar = float(abar_t)
    if not (0.0 < abar < 1.0):
        raise ConfigurationError(f"alpha_bar must lie in (0, 1), got {abar}")
    x_star = nl_map_estimate(op, y, sigma_y, x0_hat, 1.0 - abar, cfg)
    return np.sqrt(abar) / np.sqrt(1.0 - abar) * (np.asarray(x0_hat) - x_star)


def make_nonlinear_operator(kind: str, **params) -> NonlinearOperator:
    if kind == "tanh":
        return TanhOperator(int(params["n"]), float(params.get("a", 0.5)), float(params.get("b", 1.0)))
    if kind == "squared-blur":
        from .operators import gaussian_kernel

        shape = tuple(int(s) for s in np.atleast_1d(params["shape"]))
        size = int(params.get("size", 3))
        k = gaussian_kernel(size, float(params.get("std", 1.0)))
        if len(shape) == 1:
            k = k.sum(axis=0)
        return SquaredBlurOperator(CirculantOperator(k, shape, origin=(size // 2,) * len(shape)))
    raise ConfigurationError(f"unknown nonlinear operator {kind!r}")
