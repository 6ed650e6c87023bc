"""Gaussian-process transfer learning for Bayesian optimization."""

__version__ = "0.1.0"
