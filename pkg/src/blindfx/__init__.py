"""Unsupervised estimation of nonlinear audio effects."""

__version__ = "0.1.0"
