"""Spectral solvers for time-fractional semilinear parabolic control problems."""
from __future__ import annotations

__version__ = "0.1.0"
