"""LLM-assisted surrogate models for expensive evolutionary optimization."""

__version__ = "0.1.0"
