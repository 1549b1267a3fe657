"""Conditional score-based diffusion with multiscale inference schemes for time series."""

from .diffusion import GaussianDenoiser, NoiseSchedule, SamplerConfig
from .denoiser import MLPDenoiser, TrainConfig, train
from .rollout import RolloutRequest, TrajectoryEnsemble, run
from .scheme import (
    InferenceScheme,
    extend_scheme,
    make_scheme,
    plan_autoregressive,
    plan_hierarchy2,
    plan_multiscale,
    restrict_lookback,
    validate_scheme,
)
from .synthetic import PhaseMixtureDenoiser, SinusoidConfig, Trajectory, generate_dataset, generate_sinusoid
from .templates import build_template, solve_alpha_for_horizon

__version__ = "0.1.0"
