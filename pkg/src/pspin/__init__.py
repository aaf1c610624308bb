"""Analytic fluctuation constants of mixed p-spin models with external field,
with exact small-N Monte Carlo verification of the variance representation,
variance bounds, overlap chaos, and the free-energy central limit theorem."""

from .output import __version__

__all__ = ["__version__"]
