"""Thermal transport in a disordered pinned chain with velocity-flip noise."""

__version__ = "0.1.0"
