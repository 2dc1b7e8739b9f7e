"""Adaptive posterior diffusion sampling for Gaussian inverse problems."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .errors import (
    AdapsError,
    ConfigurationError,
    NumericalError,
    ResolutionError,
    SamplingError,
    SingularityError,
)
from .guidance import (
    GuidanceSpec,
    GuidanceStep,
    adaptive_xi,
    guidance_step,
    map_estimate,
    surrogate_dps,
    surrogate_map_residual,
    surrogate_pgdm,
)
from .nonlinear import GNConfig, NonlinearOperator, nl_map_estimate, nl_residual_dt
from .operators import LinearOperator, Measurement, make_operator, synthesize
from .priors import BlackboxPrior, DenoiseOutput, GaussianPrior, GMMPrior, make_prior
from .sampler import SamplerConfig, Trajectory, adaps_step, ddim_step, sample
from .schedule import Schedule, StepCoeffs, make_linear_schedule, respace, step_coeffs

__version__ = "0.1.0"
