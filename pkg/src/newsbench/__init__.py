"""Benchmarking news recommenders for ranking accuracy and carbon cost."""

__version__ = "0.1.0"
