"""Likelihood surrogates, the MAP residual and the adaptive guidance coefficient.

All surrogates are noise-space terms that are *added* to the predicted noise,
``eps_tilde = eps + xi * g``. A positive coefficient therefore moves the
implied clean estimate towards the measurement. With this convention the
direction surrogates (DPS, PiGDM) and the MAP residual share the residual sign
``A x0_hat - y``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .nonlinear import GNConfig, NonlinearOperator, nl_residual_dt
from .operators import LinearOperator
from .priors import DenoiseOutput, ScoreModel

__all__ = [
    "SURROGATES",
    "XI_MODES",
    "GuidanceSpec",
    "GuidanceStep",
    "surrogate_dps",
    "surrogate_pgdm",
    "surrogate_map_residual",
    "map_estimate",
    "adaptive_xi",
    "guidance_step",
]

SURROGATES = ("dps", "pgdm", "map")
XI_MODES = ("adaptive", "fixed", "averaged")


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _check_abar_open(abar_t):
    abar = float(abar_t)
    if not (0.0 < abar < 1.0):
        raise ConfigurationError(f"alpha_bar must lie in (0, 1) for guidance, got {abar}")
    return abar


def _x0(score, x_t, abar, den):
    if den is None:
        den = score.eps_theta(x_t, abar)
    return den.x0_hat


def surrogate_dps(score: ScoreModel, op, y, sigma_y, x_t, abar_t, den: DenoiseOutput | None = None):
    """``abar J^T A^T (A x0_hat - y)``, with ``J = d x0_hat / d x_t``."""
    abar = _check_abar_open(abar_t)
    x0 = _x0(score, x_t, abar, den)
    if isinstance(op, NonlinearOperator):
        back = op.vjp(x0, op.forward(x0) - y)
    else:
        back = op.adjoint(op.apply(x0) - y)
    return abar * score.x0_vjp(x_t, abar, back)


def surrogate_pgdm(score: ScoreModel, op, y, sigma_y, x_t, abar_t, den: DenoiseOutput | None = None):
    """``(abar / r^2) J^T A^T (A A^T + sigma_y^2/r^2 I)^{-1} (A x0_hat - y)``."""
    abar = _check_abar_open(abar_t)
    if isinstance(op, NonlinearOperator):
        raise ConfigurationError("the PiGDM surrogate is only defined for linear operators")
    r_sq = 1.0 - abar
    x0 = _x0(score, x_t, abar, den)
    back = op.adjoint(op.gram_solve(sigma_y**2 / r_sq, op.apply(x0) - y))
    return (abar / r_sq) * score.x0_vjp(x_t, abar, back)


def map_estimate(op: LinearOperator, y, sigma_y, x0_hat, r_sq):
    """Minimizer of ``|y - A x|^2/(2 sigma_y^2) + |x - x0_hat|^2/(2 r^2)``, in measurement-space form."""
    if r_sq <= 0:
        raise ConfigurationError(f"r_sq must be > 0, got {r_sq}")
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    return x0_hat + op.adjoint(op.gram_solve(sigma_y**2 / r_sq, y - op.apply(x0_hat)))


def surrogate_map_residual(op, y, sigma_y, x0_hat, abar_t, gn: GNConfig | None = None):
    """MAP residual ``d_t`` mapped to noise space; needs no denoiser Jacobian."""
    abar = _check_abar_open(abar_t)
    if isinstance(op, NonlinearOperator):
        return nl_residual_dt(op, y, sigma_y, x0_hat, abar, gn or GNConfig())
    r_sq = 1.0 - abar
    resid = op.apply(x0_hat) - y
    return np.sqrt(abar) / np.sqrt(r_sq) * op.adjoint(op.gram_solve(sigma_y**2 / r_sq, resid))


def adaptive_xi(d, g):
    """Least-squares coefficient with the factor-two correction, ``2<d,g>/|g|^2``.

    0 where ``g = 0``; +-inf when ``|d| / |g|`` exceeds the float range.
    """
    d = np.asarray(d, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    # scale g by its largest entry so |g|^2 cannot underflow or overflow
    s = np.abs(g).max(axis=-1) if g.size else np.zeros(g.shape[:-1])
    nz = s > 0
    safe = np.where(nz, s, 1.0)
    gh = g / safe[..., None] if g.ndim > 1 else g / safe
    gg = _dot(gh, gh)
    dg = _dot(d, gh)
    with np.errstate(over="ignore"):
        return np.where(nz, 2.0 * dg / (np.where(nz, gg, 1.0) * safe), 0.0)


@dataclass(frozen=True)
class GuidanceSpec:
    """Direction ``g_kind``, magnitude ``d_kind`` and the rule for the coefficient.

    ``xi_mode='fixed'`` uses ``xi_value`` as the coefficient; ``'averaged'``
    steps along ``xi_value * (g + d) / 2``. Negative adaptive coefficients are
    clamped to zero unless ``allow_negative_xi``.
    """

    g_kind: str = "pgdm"
    d_kind: str = "map"
    xi_mode: str = "adaptive"
    xi_value: float = 1.0
    normalize_g: bool = True
    allow_negative_xi: bool = False
    gn: GNConfig = field(default_factory=GNConfig)

    def __post_init__(self):
        if self.g_kind not in SURROGATES or self.d_kind not in SURROGATES:
            raise ConfigurationError(f"surrogates must be one of {SURROGATES}")
        if self.xi_mode not in XI_MODES:
            raise ConfigurationError(f"xi_mode must be one of {XI_MODES}, got {self.xi_mode!r}")
        if not np.isfinite(self.xi_value) or self.xi_value < 0:
            raise ConfigurationError(f"xi_value must be finite and >= 0, got {self.xi_value}")

    @classmethod
    def from_mode(cls, mode: str, **kwargs) -> "GuidanceSpec":
        """Parse ``adaptive``, ``fixed:<c>`` or ``averaged[:<c>]``."""
        name, _, value = mode.partition(":")
        if value:
            kwargs["xi_value"] = float(value)
        elif name == "fixed":
            raise ConfigurationError("fixed mode needs a value, e.g. 'fixed:1'")
        return cls(xi_mode=name, **kwargs)

    @property
    def label(self) -> str:
        if self.xi_mode == "adaptive":
            return "adaptive"
        return f"{self.xi_mode}:{self.xi_value:g}"


@dataclass(frozen=True)
class GuidanceStep:
    g: np.ndarray
    d: np.ndarray
    xi: np.ndarray
    update: np.ndarray
    d_norm: np.ndarray
    alignment: np.ndarray


def _surrogate(kind, spec, score, op, y, sigma_y, x_t, abar, den):
    if kind == "dps":
        return surrogate_dps(score, op, y, sigma_y, x_t, abar, den)
    if kind == "pgdm":
        return surrogate_pgdm(score, op, y, sigma_y, x_t, abar, den)
    return surrogate_map_residual(op, y, sigma_y, den.x0_hat, abar, spec.gn)


def _unit(v):
    norm = np.sqrt(_dot(v, v))
    safe = np.where(norm > 0, norm, 1.0)
    return np.where((norm > 0)[..., None], v / safe[..., None], 0.0), norm


def guidance_step(
    spec: GuidanceSpec,
    score: ScoreModel,
    op,
    y,
    sigma_y,
    x_t,
    abar_t,
    den: DenoiseOutput | None = None,
) -> GuidanceStep:
    abar = _check_abar_open(abar_t)
    x_t = np.asarray(x_t, dtype=np.float64)
    if den is None:
        den = score.eps_theta(x_t, abar)
    g = _surrogate(spec.g_kind, spec, score, op, y, sigma_y, x_t, abar, den)
    if spec.d_kind == spec.g_kind:
        d = g.copy()
    else:
        d = _surrogate(spec.d_kind, spec, score, op, y, sigma_y, x_t, abar, den)
    g_hat, _ = _unit(g)
    d_hat, d_norm = _unit(d)
    alignment = _dot(d_hat, g_hat)
    if spec.normalize_g:
        g = g_hat
    if spec.xi_mode == "adaptive":
        xi = adaptive_xi(d, g)
        if not spec.allow_negative_xi:
            xi = np.maximum(xi, 0.0)
        update = xi[..., None] * g
    elif spec.xi_mode == "fixed":
        xi = np.full(d_norm.shape, spec.xi_value)
        update = xi[..., None] * g
    else:
        xi = np.full(d_norm.shape, spec.xi_value)
        update = xi[..., None] * 0.5 * (g + d)
    return GuidanceStep(g=g, d=d, xi=xi, update=update, d_norm=d_norm, alignment=alignment)
