"""Stratified and two-phase sampling for choosing and validating simulation regions."""

__version__ = "0.1.0"
