"""Desk-scale digital twin for signalized urban corridors."""

__version__ = "0.1.0"
