"""Monotonic two-stage missing-entity prediction on hyper-relational knowledge graphs."""

__version__ = "0.1.0"
