"""Seed-bank Moran model, its lookdown construction and the seed-bank coalescent."""

from .core import (
    ACTIVE,
    DORMANT,
    ActivityState,
    Configuration,
    ModelParams,
    Particle,
    RandomSource,
    phi_activate,
    phi_deactivate,
    phi_reproduce,
    sample_stationary_config,
)

__all__ = [
    "ACTIVE",
    "DORMANT",
    "ActivityState",
    "Configuration",
    "ModelParams",
    "Particle",
    "RandomSource",
    "phi_activate",
    "phi_deactivate",
    "phi_reproduce",
    "sample_stationary_config",
]

__version__ = "0.1.0"
