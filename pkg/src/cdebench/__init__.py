"""Conditional distribution estimation methods and a seeded comparison benchmark."""
__version__ = "0.1.0"
