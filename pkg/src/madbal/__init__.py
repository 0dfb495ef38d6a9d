"""Maturity-aware deep active learning for semantic segmentation.

Pixel-level uncertainty with auxiliary-head agreement, superpixel and
cluster breakdown of the label budget, and a session layer for running
annotation rounds against either a simulated or an HTTP-connected oracle.
"""

__version__ = "0.1.0"
