"""Affine multi-factor term-structure models for commodity futures and yields."""

__version__ = "0.1.0"
