"""Stress propagation analytics over information-filtered market networks."""

__version__ = "0.1.0"
