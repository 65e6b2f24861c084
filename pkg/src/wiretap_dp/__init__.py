"""Learnable-pattern differential privacy for semantic communication over wiretap channels."""

__version__ = "0.1.0"
