"""Synchronized dynamical optimal transport on staggered space-time grids."""

__version__ = "0.1.0"
