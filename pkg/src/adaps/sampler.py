"""Unconditional DDIM and the adaptive conditional sampler.

Chains are simulated as a batch of rows, but each chain owns a generator
seeded with ``rng_seed + chain_index``: its initial state and its per-step
noise never depend on how many other chains run alongside it.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AdapsError, ConfigurationError, SamplingError
from .guidance import GuidanceSpec, GuidanceStep, guidance_step
from .operators import Measurement
from .priors import DenoiseOutput, ScoreModel
from .schedule import Schedule, StepCoeffs, respace, step_coeffs

__all__ = [
    "SamplerConfig",
    "Trajectory",
    "ddim_step",
    "adaps_step",
    "sample",
]


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 100
    eta: float = 1.0
    guidance: GuidanceSpec | None = field(default_factory=GuidanceSpec)
    rng_seed: int = 0
    record_trajectory: bool = False
    chains: int = 1
    clip_x0: float | None = None
    jobs: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if not (0.0 <= self.eta <= 1.0):
            raise ConfigurationError("eta must lie in [0, 1]")
        if self.chains < 1 or self.jobs < 1:
            raise ConfigurationError("chains and jobs must be >= 1")


@dataclass
class Trajectory:
    """Per-step diagnostics, arrays indexed ``[step, chain]`` in sampling order.

    ``x_t`` and ``x0_hat`` are only filled when the sampler records states.
    """

    t: np.ndarray
    xi: np.ndarray
    d_norm: np.ndarray
    alignment: np.ndarray
    x_t: np.ndarray | None = None
    x0_hat: np.ndarray | None = None

    def __len__(self):
        return int(self.t.size)

    @classmethod
    def concat(cls, parts):
        def cat(name):
            vals = [getattr(p, name) for p in parts]
            if any(v is None for v in vals):
                return None
            return np.concatenate(vals, axis=1)

        return cls(
            t=parts[0].t,
            xi=cat("xi"),
            d_norm=cat("d_norm"),
            alignment=cat("alignment"),
            x_t=cat("x_t"),
            x0_hat=cat("x0_hat"),
        )


def ddim_step(x_t, coeffs: StepCoeffs, den: DenoiseOutput, noise):
    """Markov form ``x_t / sqrt(alpha) - gamma eps + sigma noise``."""
    out = x_t / np.sqrt(coeffs.alpha) - coeffs.gamma * den.eps
    if coeffs.sigma > 0:
        out = out + coeffs.sigma * noise
    return out


def adaps_step(x_t, coeffs: StepCoeffs, den: DenoiseOutput, gstep: GuidanceStep, noise):
    return ddim_step(x_t, coeffs, den, noise) - coeffs.gamma * gstep.update


def _clip(den, x_t, coeffs, bound):
    x0 = np.clip(den.x0_hat, -bound, bound)
    eps = (x_t - coeffs.sqrt_abar * x0) / coeffs.sqrt_one_minus_abar
    return DenoiseOutput(eps, x0)


def _run_block(config, schedule, score, op, measurement, chain_ids):
    n = score.dim
    rngs = [np.random.default_rng(config.rng_seed + int(c)) for c in chain_ids]
    x = np.stack([r.standard_normal(n) for r in rngs])
    N = schedule.steps
    B = len(chain_ids)
    ts = np.empty(N, dtype=np.int64)
    xis = np.zeros((N, B))
    dn = np.zeros((N, B))
    al = np.zeros((N, B))
    xs = np.empty((N, B, n)) if config.record_trajectory else None
    x0s = np.empty((N, B, n)) if config.record_trajectory else None
    guided = config.guidance is not None and op is not None
    for k, pos in enumerate(range(N - 1, -1, -1)):
        try:
            c = step_coeffs(schedule, pos, config.eta)
            den = score.eps_theta(x, c.abar)
            if config.clip_x0 is not None:
                den = _clip(den, x, c, config.clip_x0)
            noise = np.stack([r.standard_normal(n) for r in rngs])
            if guided:
                gs = guidance_step(
                    config.guidance, score, op, measurement.y, measurement.sigma_y, x, c.abar, den
                )
                x_next = adaps_step(x, c, den, gs, noise)
                xis[k], dn[k], al[k] = gs.xi, gs.d_norm, gs.alignment
            else:
                x_next = ddim_step(x, c, den, noise)
            if not np.all(np.isfinite(x_next)):
                raise SamplingError("non-finite state", step=k)
        except SamplingError:
            raise
        except (AdapsError, ArithmeticError, ValueError) as exc:
            raise SamplingError(str(exc), step=k) from exc
        ts[k] = c.t
        if xs is not None:
            xs[k] = x
            x0s[k] = den.x0_hat
        x = x_next
    return x, Trajectory(ts, xis, dn, al, xs, x0s)


def sample(
    config: SamplerConfig,
    schedule: Schedule,
    score: ScoreModel,
    op=None,
    measurement: Measurement | None = None,
):
    """Run ``config.chains`` chains; returns ``(samples (chains, n), Trajectory)``.

    ``schedule`` is respaced to ``config.steps`` unless it already has that
    many respaced timesteps. Guidance is applied only when both an operator and
    a measurement are given and ``config.guidance`` is set.
    """
    if config.guidance is not None and (op is None) != (measurement is None):
        raise ConfigurationError("conditional sampling needs both an operator and a measurement")
    if schedule.steps != config.steps:
        schedule = respace(schedule, config.steps)
    chain_ids = np.arange(config.chains)
    jobs = min(config.jobs, config.chains)
    if jobs == 1:
        return _run_block(config, schedule, score, op, measurement, chain_ids)
    blocks = np.array_split(chain_ids, jobs)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(lambda b: _run_block(config, schedule, score, op, measurement, b), blocks))
    x = np.concatenate([p[0] for p in parts], axis=0)
    return x, Trajectory.concat([p[1] for p in parts])
