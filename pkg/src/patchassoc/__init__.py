"""Patch association in positional-attention transformers: data, model, training, and analysis."""

__version__ = "0.1.0"
