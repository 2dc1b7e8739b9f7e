"""Discrete variance-preserving noise schedule and DDIM step coefficients.

Timesteps are 1-based: ``alpha_bar(0) == 1`` is the clean-data convention and
``alpha_bar(T)`` is the most noisy level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "Schedule",
    "StepCoeffs",
    "make_linear_schedule",
    "respace",
    "step_coeffs",
]

_CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class Schedule:
    betas: np.ndarray
    alpha_bars: np.ndarray
    respaced_timesteps: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        abar = np.asarray(self.alpha_bars, dtype=np.float64)
        ts = np.asarray(self.respaced_timesteps, dtype=np.int64)
        if betas.ndim != 1 or betas.shape != abar.shape or betas.size == 0:
            raise ConfigurationError("betas and alpha_bars must be 1-D of equal non-zero length")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ConfigurationError("betas must lie in (0, 1)")
        if ts.ndim != 1 or ts.size == 0:
            raise ConfigurationError("respaced_timesteps must be non-empty")
        if ts[0] < 1 or ts[-1] > betas.size or np.any(np.diff(ts) <= 0):
            raise ConfigurationError("respaced_timesteps must be strictly increasing within 1..T")
        for name, arr in (("betas", betas), ("alpha_bars", abar), ("respaced_timesteps", ts)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_alpha_bars(cls, alpha_bars) -> "Schedule":
        """Build a schedule (identity spacing) from a strictly decreasing alpha-bar sequence."""
        abar = np.asarray(alpha_bars, dtype=np.float64)
        prev = np.concatenate(([1.0], abar[:-1]))
        betas = 1.0 - abar / prev
        return cls(betas, abar, np.arange(1, abar.size + 1))

    @property
    def T(self) -> int:
        return int(self.betas.size)

    @property
    def steps(self) -> int:
        return int(self.respaced_timesteps.size)

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])


@dataclass(frozen=True)
class StepCoeffs:
    """Coefficients of one respaced jump t -> t_prev."""

    t: int
    t_prev: int
    abar: float
    abar_prev: float
    alpha: float
    gamma: float
    sigma: float
    r_sq: float
    sqrt_abar: float
    sqrt_one_minus_abar: float


def make_linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> Schedule:
    if int(T) != T or T < 1:
        raise ConfigurationError(f"T must be a positive integer, got {T}")
    if not (0 < beta_start <= beta_end < 1):
        raise ConfigurationError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    alpha_bars = np.cumprod(1.0 - betas)
    return Schedule(betas, alpha_bars, np.arange(1, int(T) + 1))


def respace(schedule: Schedule, N: int, mode: str = "uniform") -> Schedule:
    """Select ``N`` timesteps with a uniform stride that always ends at ``T``."""
    if mode != "uniform":
        raise ConfigurationError(f"unknown respacing mode {mode!r}")
    T = schedule.T
    if int(N) != N or not (1 <= N <= T):
        raise ConfigurationError(f"need 1 <= N <= T={T}, got {N}")
    k = np.arange(1, int(N) + 1, dtype=np.int64)
    ts = (k * T) // int(N)
    return Schedule(schedule.betas, schedule.alpha_bars, ts)


def step_coeffs(schedule: Schedule, pos: int, eta: float) -> StepCoeffs:
    """Coefficients for the jump from ``respaced_timesteps[pos]`` to its predecessor.

    ``pos == 0`` targets the clean level ``alpha_bar = 1``. Under respacing the
    per-jump ``alpha`` is the ratio of consecutive alpha-bars.
    """
    ts = schedule.respaced_timesteps
    if not (0 <= pos < ts.size):
        raise ConfigurationError(f"position {pos} out of range for {ts.size} steps")
    if not (0.0 <= eta <= 1.0):
        raise ConfigurationError(f"eta must lie in [0, 1], got {eta}")
    t = int(ts[pos])
    t_prev = int(ts[pos - 1]) if pos > 0 else 0
    abar = schedule.alpha_bar(t)
    abar_prev = schedule.alpha_bar(t_prev)
    alpha = abar / abar_prev
    one_minus_abar = 1.0 - abar
    sigma = eta * np.sqrt(1.0 - alpha) * np.sqrt((1.0 - abar_prev) / one_minus_abar)
    rem = 1.0 - abar_prev - sigma**2
    if rem < 0.0:
        if rem < -_CLAMP_TOL:
            raise ConfigurationError(f"negative DDIM variance {rem:.3e} at t={t}")
        rem = 0.0
    gamma = np.sqrt(one_minus_abar) / np.sqrt(alpha) - np.sqrt(rem)
    return StepCoeffs(
        t=t,
        t_prev=t_prev,
        abar=abar,
        abar_prev=abar_prev,
        alpha=float(alpha),
        gamma=float(gamma),
        sigma=float(sigma),
        r_sq=float(one_minus_abar),
        sqrt_abar=float(np.sqrt(abar)),
        sqrt_one_minus_abar=float(np.sqrt(one_minus_abar)),
    )
