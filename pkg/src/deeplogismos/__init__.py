"""Probability-map-driven globally optimal 3D surface segmentation toolkit."""

__version__ = "0.1.0"
