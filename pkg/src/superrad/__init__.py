"""Collective decay of inverted emitter arrays."""

__version__ = "0.1.0"
