"""Multilingual NMT with pluggable bottleneck adapters (parallel, serial, embedding)."""

__version__ = "0.1.0"
