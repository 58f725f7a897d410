"""Harmonic-gauge simulator and diagnostics for the 2D one-phase Stefan problem."""

__version__ = "0.1.0"
