"""Synthetic-aperture thermal search toolkit."""

__version__ = "0.1.0"
