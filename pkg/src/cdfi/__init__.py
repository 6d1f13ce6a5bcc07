"""Compression-driven frame interpolation on a desk-scale numpy stack."""

__version__ = "0.1.0"
