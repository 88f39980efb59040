"""Harnessed evolution environment."""

__version__ = "0.1.0"
