"""Corruption-aware GAN denoising with a hidden-state loss."""

__version__ = "0.1.0"
