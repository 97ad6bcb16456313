"""Cycle-rooted spanning forests on graph-discretized surfaces."""

__version__ = "0.1.0"
