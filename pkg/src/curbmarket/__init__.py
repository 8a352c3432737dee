"""curbmarket: dynamic performance-based parking pricing and market simulation."""

__version__ = "0.1.0"
