"""Numerical laboratory for inverse problems of stochastic parabolic and
hyperbolic PDEs driven by a scalar Brownian motion."""

__version__ = "0.1.0"
