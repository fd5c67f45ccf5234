"""Numerical laboratory for conformal compactification of ALH metrics."""

__version__ = "0.1.0"
