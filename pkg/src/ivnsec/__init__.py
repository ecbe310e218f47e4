"""Deterministic simulator of a security-enhanced software-defined in-vehicle network."""

__version__ = "0.1.0"
