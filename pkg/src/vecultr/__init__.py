"""Vectorization-based unbiased learning to rank."""

__version__ = "0.1.0"
