"""Secular-variation forward model and small-anomaly reconstruction."""

__version__ = "0.1.0"
