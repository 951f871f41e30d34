"""Zero-shot industrial anomaly synthesis toolkit."""

__version__ = "0.1.0"
