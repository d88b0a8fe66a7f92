"""Score-distillation laboratory with time-prioritized timestep schedules.

Everything runs against an analytic Gaussian-mixture denoiser, so scores and
gradient moments can be checked against closed forms.
"""

from tpsds.diffusion import (
    NoisedSample,
    NoiseSchedule,
    build_schedule,
    ddpm_step,
    estimate_x0,
    noise_sample,
)
from tpsds.oracle import GaussianMixture, MixtureDenoiser, log_density, oracle_eps
from tpsds.scheduling import (
    PriorWeight,
    build_prior_weight,
    build_sampler,
    sample_timestep,
    schedule_timestep,
)
from tpsds.sds import DivergenceError, SdsConfig, TrajectoryRecord, optimize, sds_gradient

__version__ = "0.1.0"

__all__ = [
    "DivergenceError",
    "GaussianMixture",
    "MixtureDenoiser",
    "NoiseSchedule",
    "NoisedSample",
    "PriorWeight",
    "SdsConfig",
    "TrajectoryRecord",
    "build_prior_weight",
    "build_sampler",
    "build_schedule",
    "ddpm_step",
    "estimate_x0",
    "log_density",
    "noise_sample",
    "optimize",
    "oracle_eps",
    "sample_timestep",
    "schedule_timestep",
    "sds_gradient",
]
