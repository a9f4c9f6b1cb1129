"""Boundary-aware depth estimation with instance convolutions."""

__version__ = "0.1.0"
