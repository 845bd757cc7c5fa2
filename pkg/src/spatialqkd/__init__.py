"""Spatial-mode high-dimensional quantum key distribution toolkit."""

__version__ = "0.1.0"
