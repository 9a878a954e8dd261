"""Desk-scale laboratory for directed-information measures of toy autoregressive language models."""

__version__ = "0.1.0"
