"""Bayesian model of football chance creation."""

__version__ = "0.1.0"
