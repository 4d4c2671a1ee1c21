"""Pilot-wave simulation of Stern-Gerlach and two-step EPR-B spin measurements."""
from .core import (
    ConfigError,
    DerivedQuantities,
    PhysicalConfig,
    Position2D,
    SpinOrientation,
    Spinor,
    default_config,
    derive,
    load_config,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DerivedQuantities",
    "PhysicalConfig",
    "Position2D",
    "SpinOrientation",
    "Spinor",
    "default_config",
    "derive",
    "load_config",
    "__version__",
]
