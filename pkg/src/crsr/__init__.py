"""Desk-scale characteristic-regularised face super-resolution."""

__version__ = "0.1.0"
