"""Layman-style dataset construction and semantics-based report evaluation."""

__version__ = "0.1.0"
