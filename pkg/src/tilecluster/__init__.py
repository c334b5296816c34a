"""Unsupervised clustering of histology image tiles."""

__version__ = "0.1.0"
