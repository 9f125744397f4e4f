"""Thin-obstacle detection on event-camera streams."""

__version__ = "0.1.0"
