"""Nested-CES production, productivity and labor market power estimation."""

__version__ = "0.1.0"
