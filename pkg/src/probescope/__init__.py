"""Probe and enclosure methods for an impedance obstacle, with finite element forward solves."""

__version__ = "0.1.0"
