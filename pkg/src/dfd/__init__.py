"""Dual-path frequency discriminators for few-shot anomaly detection."""

__version__ = "0.1.0"
