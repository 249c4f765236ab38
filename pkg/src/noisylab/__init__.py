"""Noise-tolerant training with mutual label correction between two networks."""

__version__ = "0.1.0"
