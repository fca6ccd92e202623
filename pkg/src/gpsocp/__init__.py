"""GP-learned residual dynamics with SOCP safety filters for switching systems."""

__version__ = "0.1.0"
