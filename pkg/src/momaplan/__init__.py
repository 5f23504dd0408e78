"""Whole-body motion planning for a differential-drive mobile manipulator."""

__version__ = "0.1.0"
