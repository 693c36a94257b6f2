"""Finite-volume simulation of the constrained stochastic Allen-Cahn equation."""

__version__ = "0.1.0"
