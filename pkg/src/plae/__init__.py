"""Pseudo-labelling auto-encoder, its baselines, and the numpy autodiff engine they run on."""

__version__ = "0.1.0"
