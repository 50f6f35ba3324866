"""Hierarchical transformer multi-document summarizer with attention-aligned decoding."""

__version__ = "0.1.0"
