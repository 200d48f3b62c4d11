"""Ordered stochastic actor-oriented models: simulation and method-of-moments estimation."""

__version__ = "0.1.0"
