"""Desk-scale laboratory for latent-subspace generative models."""

__version__ = "0.1.0"
