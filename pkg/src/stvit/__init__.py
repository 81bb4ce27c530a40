"""Semantic-token vision transformer models, cost analysis, and cluster lab."""

__version__ = "0.1.0"
