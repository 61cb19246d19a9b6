"""Adaptive masking loss with representation consistency (AMRC) for
multivariate time-series forecasting, plus the small forecasting engine,
diagnostics and CLI that exercise it end to end."""

__version__ = "0.1.0"

from .backend import BACKEND

__all__ = ["BACKEND", "__version__"]
