"""Iterative lottery-ticket pruning for evolution strategies."""

__version__ = "0.1.0"
