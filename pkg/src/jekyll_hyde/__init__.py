"""Unsupervised moving-target masking with a paired mask/background network."""

__version__ = "0.1.0"
