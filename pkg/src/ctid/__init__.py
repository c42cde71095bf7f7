"""Additive continuous-time system identification by block-coordinate descent."""

__version__ = "0.1.0"
