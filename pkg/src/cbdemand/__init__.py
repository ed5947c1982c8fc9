"""Probabilistic count-demand forecasting with Cyclic Boosting."""

__version__ = "0.1.0"
