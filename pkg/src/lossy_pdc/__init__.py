"""Lossy type-II PDC in waveguides: Gaussian master-equation model, detection and loss inversion."""

__version__ = "0.1.0"
