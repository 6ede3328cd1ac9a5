"""Desk-scale blind navigation benchmark with contact-driven box reconstruction."""

__version__ = "0.1.0"
