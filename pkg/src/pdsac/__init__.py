"""Parallel distributional prioritized soft actor-critic for 3D drone navigation."""

__version__ = "0.1.0"
