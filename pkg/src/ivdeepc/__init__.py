"""Data-enabled predictive control with instrumental variables."""

__version__ = "0.1.0"
