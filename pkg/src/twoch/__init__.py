"""Periodic conservative solutions of the two-component Camassa-Holm system in Lagrangian coordinates."""

__version__ = "0.1.0"
