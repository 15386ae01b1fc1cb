"""Exact and Monte Carlo tools for the averaging process on the discrete torus."""

__version__ = "0.1.0"

from .torus import MassProfile, TorusError, TorusSpec  # noqa: E402

__all__ = ["MassProfile", "TorusError", "TorusSpec", "__version__"]
