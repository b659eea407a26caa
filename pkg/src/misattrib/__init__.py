"""Misattribution-fairness evaluation for embed-and-rank authorship attribution."""

__version__ = "0.1.0"
