"""Differentiable Gaussian splatting with homodirectional densification."""

__version__ = "1.0.0"
