"""Numerical laboratory for localized MHD regularity diagnostics on periodic grids."""

__version__ = "0.1.0"
