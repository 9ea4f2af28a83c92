"""Desk-scale end-to-end neural motion planner."""

__version__ = "0.1.0"
