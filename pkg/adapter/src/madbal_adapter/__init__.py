"""Toy model adapter: trains a small segmentation net on a madbal session
pool and exports the head-output tensors the selection engine consumes."""

__version__ = "0.1.0"
