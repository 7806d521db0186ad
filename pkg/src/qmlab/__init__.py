"""Numerical toolkit for glancing-hypersurface quasimode concentration experiments."""

__version__ = "0.1.0"
