"""Numerical laboratory for flows driven by rough wave-propagated fields."""

__version__ = "0.1.0"
