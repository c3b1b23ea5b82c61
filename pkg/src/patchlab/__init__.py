"""Patch-similarity image denoising toolkit."""

__version__ = "0.1.0"
