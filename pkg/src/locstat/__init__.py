"""Simulation and statistical checks for local eigenvalue statistics of random Schrödinger operators."""

__version__ = "0.1.0"
