"""Corotational Oldroyd fluid coupled to a viscoelastic shell in a periodic channel."""

__version__ = "0.1.0"
