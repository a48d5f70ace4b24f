"""Linear regression with a right-censored covariate."""

__version__ = "0.1.0"
