"""Dialogue generation with compressed history memories and emotional preference training."""

__version__ = "0.1.0"
