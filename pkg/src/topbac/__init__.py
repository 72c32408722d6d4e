"""Topologically initialised Bayesian active contours for grayscale images."""

__version__ = "0.1.0"
