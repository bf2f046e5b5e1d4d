"""Truncated SU_q(2) representations, coboundary cocycles and twisted Haar weights."""

__version__ = "0.1.0"
