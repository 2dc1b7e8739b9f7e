"""Distortion metrics and the per-run metrics record."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ConfigurationError

PSNR_CAP = 200.0


def psnr(x, ref, peak: float) -> float:
    """``10 log10(peak^2 n / |x - ref|^2)``; ``inf`` when the inputs are identical."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ConfigurationError(f"shape mismatch {x.shape} vs {ref.shape}")
    if peak <= 0:
        raise ConfigurationError("peak must be > 0")
    err = float(np.sum((x - ref) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 * x.size / err)


def capped(value: float) -> float:
    return min(value, PSNR_CAP)


@dataclass
class MetricsRecord:
    """Run summary. ``w1`` is the distance to the oracle posterior, in signal units.

    ``w1`` stands in for a perceptual metric; it is ``None`` when no oracle exists.
    ``wall_time`` is kept out of ``metrics.json`` so that file is reproducible.
    """

    task: str
    chains: int
    steps: int
    eta: float
    sigma_y: float
    psnr: float
    psnr_mean: float
    mse: float
    measurement_mse: float
    w1: float | None
    w1_over_std: float | None
    mean_xi: float
    mean_alignment: float
    wall_time: float = 0.0

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d.pop("wall_time")
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "MetricsRecord":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})
