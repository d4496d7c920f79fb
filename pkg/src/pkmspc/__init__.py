"""Probabilistic kernel PCA process monitoring."""

__version__ = "0.1.0"
