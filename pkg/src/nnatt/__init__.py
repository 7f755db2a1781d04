"""Nearest-neighbour matching estimates of treatment effects on event logs."""

__version__ = "0.1.0"
