"""Dyadic co-speech gesture generation with a conditioned diffusion transformer."""

__version__ = "0.1.0"
