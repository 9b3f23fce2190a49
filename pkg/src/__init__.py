"""Minkowski (anisotropic) surface geometry: frames, functionals, variations and stability."""

__version__ = "1.0.0"
