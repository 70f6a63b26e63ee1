"""Sparse identification of differential equations in the Laplace domain."""

__version__ = "0.1.0"
