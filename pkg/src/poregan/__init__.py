"""Slice-conditioned 3D porous media generation and morphological validation."""

__version__ = "0.1.0"
