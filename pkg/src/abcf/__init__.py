"""Random-forest approximate Bayesian computation for parameter inference."""

__version__ = "0.1.0"
