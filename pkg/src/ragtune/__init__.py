"""Retriever tuning from generator feedback over a sparse bag-of-tokens index."""

__version__ = "0.1.0"
