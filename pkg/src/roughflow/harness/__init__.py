from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .fitting import FitError, ScalingFit, fit_scaling

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "FitError",
    "ScalingFit",
    "fit_scaling",
]
