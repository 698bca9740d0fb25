"""Numerical laboratory for the fractional unstable obstacle problem."""
__version__ = "0.1.0"
