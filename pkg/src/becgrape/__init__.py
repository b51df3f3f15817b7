"""GRAPE optimal control of a Bose-Einstein condensate in optical lattices."""

__version__ = "0.1.0"
