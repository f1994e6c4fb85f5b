"""Numerical experiments with weighted Bergman kernels of polynomial spaces."""

__version__ = "0.1.0"
