"""Biased backpressure routing with GNN-predicted link duty cycles."""

__version__ = "0.1.0"
