"""Numerical laboratory for linearized hybrid-imaging inverse problems."""

__version__ = "0.1.0"
