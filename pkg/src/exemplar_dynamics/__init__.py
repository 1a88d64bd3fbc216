"""Exemplar dynamics of phonological contrast: a stochastic exemplar engine and its density-field limit."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    ConfigError,
    DegenerateStatistics,
    DiagnosticsRow,
    EmptyWordError,
    InsufficientData,
    ModelParams,
    NoFiniteEquilibrium,
    Regime,
    StabilityError,
    WordParams,
)

__all__ = [
    "ConfigError",
    "DegenerateStatistics",
    "DiagnosticsRow",
    "EmptyWordError",
    "InsufficientData",
    "ModelParams",
    "NoFiniteEquilibrium",
    "Regime",
    "StabilityError",
    "WordParams",
    "__version__",
]
