"""Planetary geostrophic thermal model: pressure solve, time stepping, Galerkin engine and estimate checks."""
from .errors import PGError
from .grid import BC, Grid, ScalarField, VelocityField
from .params import ModelParams, validate_params

__version__ = "0.1.0"

__all__ = ["BC", "Grid", "ModelParams", "PGError", "ScalarField", "VelocityField", "validate_params", "__version__"]
