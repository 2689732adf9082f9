"""Numerical toolkit for channel coding with mismatched decoding metrics."""

__version__ = "0.1.0"
