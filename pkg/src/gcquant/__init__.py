"""Numerical lab for toric degenerations of flag manifolds and the
concentration behaviour of quantized sections."""

__version__ = "0.1.0"
