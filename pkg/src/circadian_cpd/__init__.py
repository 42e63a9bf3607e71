"""Hierarchical Bayesian online change-point detection on circadian latent-class models."""

__version__ = "0.1.0"
