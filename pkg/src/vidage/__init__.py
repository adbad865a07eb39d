"""Temporally consistent attribute progression of image sequences in feature space."""

__version__ = "0.1.0"
