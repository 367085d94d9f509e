"""Score-variance uncertainty estimation and uncertainty-guided sampling for diffusion models."""

from .errors import ConfigError, HookError, NumericError, ScoreUQError, StorageError
from .guidance import GuidanceConfig, guided_sample
from .rng import Purpose, Streams
from .sampler import SamplerConfig, run_sampler
from .schedule import NoiseSchedule, build_linear_schedule, plan_timesteps
from .score import GmmDistribution, GmmPredictor
from .uncertainty import UncertaintyConfig, UncertaintyHook, estimate_step_uncertainty

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "GmmDistribution",
    "GmmPredictor",
    "GuidanceConfig",
    "HookError",
    "NoiseSchedule",
    "NumericError",
    "Purpose",
    "SamplerConfig",
    "ScoreUQError",
    "StorageError",
    "Streams",
    "UncertaintyConfig",
    "UncertaintyHook",
    "build_linear_schedule",
    "estimate_step_uncertainty",
    "guided_sample",
    "plan_timesteps",
    "run_sampler",
]
