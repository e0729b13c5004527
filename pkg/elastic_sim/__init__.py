"""Deterministic simulator of elastic pipeline training with layer freezing."""

__version__ = "1.0.0"
