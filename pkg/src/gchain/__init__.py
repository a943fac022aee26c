"""Hierarchical-marker chain engine: exact transition rule plus Monte Carlo labs."""

__version__ = "0.1.0"
