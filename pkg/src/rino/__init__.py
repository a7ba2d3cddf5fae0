"""Rotation-invariant dense correspondence between non-rigid 3D shapes."""
__version__ = "0.1.0"
