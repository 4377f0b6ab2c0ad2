"""Numerical checks for the linearized dynamics around mass-supercritical NLS self-similar profiles."""

__version__ = "0.1.0"
