"""Spatiotemporal fusion of a noisy HR reference with an LR image pair."""
__version__ = "0.1.0"
