"""Budgeted top-k approximation of the backward sparse products in GNN training."""

__version__ = "0.1.0"
