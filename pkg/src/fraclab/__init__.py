"""Spectral fractional Laplacian laboratory."""
