"""Pseudo-spectral laboratory for the convective Brinkman-Forchheimer equations
on the periodic cube, deterministic and with OU-smoothed additive noise."""

from .config import ConfigError, RunConfig, load_config, reference_config
from .deterministic import CbfParams, integrate
from .spectral import Grid, SpectralField, norm
from .stochastic import build_noise_model, generate_two_sided_path
from .suite import run_suite

__version__ = "0.1.0"

__all__ = [
    "CbfParams",
    "ConfigError",
    "Grid",
    "RunConfig",
    "SpectralField",
    "build_noise_model",
    "generate_two_sided_path",
    "integrate",
    "load_config",
    "norm",
    "reference_config",
    "run_suite",
]
