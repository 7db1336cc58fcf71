"""Recovery of fractional order and piecewise-constant diffusivity from boundary data."""

__version__ = "0.1.0"
