"""Traveling chemotactic bands: closed forms, PDE solver, stability and Monte Carlo checks."""

__version__ = "0.1.0"

from .errors import ChemobandError, NumericalError, ValidationError  # noqa: E402
from .model import (  # noqa: E402
    BandParams,
    BandProfile,
    FieldState,
    Grid1D,
    ModelParams,
    PerturbParams,
    Regime,
    validate,
)

__all__ = [
    "BandParams",
    "BandProfile",
    "ChemobandError",
    "FieldState",
    "Grid1D",
    "ModelParams",
    "NumericalError",
    "PerturbParams",
    "Regime",
    "ValidationError",
    "validate",
]
