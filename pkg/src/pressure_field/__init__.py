"""Pressure-field (stigmergic) coordination on meeting-room scheduling."""

__version__ = "0.1.0"
