"""Viscosity-regularized goal-conditioned value learning on grid mazes."""

__version__ = "0.1.0"
