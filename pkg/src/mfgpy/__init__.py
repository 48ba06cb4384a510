"""Stationary mean-field games on the flat torus via the Hopf–Cole reduction."""

__version__ = "0.1.0"
