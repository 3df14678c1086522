"""Baseline hydropower operating policies and water-value offer curves."""

__version__ = "0.1.0"
