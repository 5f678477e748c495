"""Numerical laboratory for the dashed-line Galerkin truncation of 2D Euler."""

__version__ = "0.1.0"
