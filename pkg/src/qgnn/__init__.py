"""Hybrid quantum-classical GNN toolkit for track-segment classification."""

__version__ = "0.1.0"
