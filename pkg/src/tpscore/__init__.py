"""Trajectory proper scoring for agent uncertainty streams."""

__version__ = "0.1.0"
