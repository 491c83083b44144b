"""Retention prediction for free-to-play game telemetry."""

__version__ = "0.1.0"
