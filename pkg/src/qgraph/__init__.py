"""Spectra of Schroedinger operators on metric graphs under graph surgery."""

__version__ = "0.1.0"
