"""Metastability toolkit for the dilute Ising model."""

__version__ = "0.1.0"
