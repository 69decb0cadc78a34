"""Differentiable witness points for convex and composite meshes."""

__version__ = "0.1.0"
