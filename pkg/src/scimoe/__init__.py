"""Desk-scale mixture-of-experts language model for scientific text."""

__version__ = "0.1.0"
