"""Hierarchical temporal attention video-text alignment, desk scale."""

__version__ = "0.1.0"
