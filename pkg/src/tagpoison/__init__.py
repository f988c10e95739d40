"""Poison-text backdoor laboratory for text-attributed graphs."""

__version__ = "0.1.0"
