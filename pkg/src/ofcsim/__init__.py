"""Optimal frequency control simulation on a DC droop network."""
__version__ = "0.1.0"
