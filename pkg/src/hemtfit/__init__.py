"""Datasheet-driven HEMT model extraction with an iteratively focused TPE optimizer."""

__version__ = "0.1.0"
