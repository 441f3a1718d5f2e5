"""Latent mean-teacher training with Gaussian-process latent supervision
for semi-supervised low-light image enhancement."""

__version__ = "0.1.0"
