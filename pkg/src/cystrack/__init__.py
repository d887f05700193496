"""Cyst tracking and morphometric analysis for organoid time-lapse videos."""

__version__ = "0.1.0"
