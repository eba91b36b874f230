"""Deterministic core of a panoramic navigation world model."""

__version__ = "0.1.0"
