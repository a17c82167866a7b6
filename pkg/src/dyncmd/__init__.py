"""Dynamics-aware motion tracking for a planar legged character."""

__version__ = "0.1.0"
