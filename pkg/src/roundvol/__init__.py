"""Driving-volatility features and K-means behaviour clustering for
rounD-style roundabout drone trajectories."""

__version__ = "0.1.0"
