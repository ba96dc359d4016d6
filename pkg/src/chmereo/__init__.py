"""Consistent histories, granular partitions, and their overlay on Hilbert space."""

__version__ = "0.1.0"
