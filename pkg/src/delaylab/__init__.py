"""Numerical laboratory for linear control systems with state and control delays."""

__all__ = ["__version__"]

__version__ = "0.1.0"
