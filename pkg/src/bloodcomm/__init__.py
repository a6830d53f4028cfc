"""Particle-resolved simulator of digital molecular communication in a blood vessel."""

__version__ = "0.1.0"
