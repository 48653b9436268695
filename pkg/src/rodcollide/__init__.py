"""Viscoelastic rod dropped on an elastic floor: simulation and verification."""

__version__ = "0.1.0"
