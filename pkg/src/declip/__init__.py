"""Simulate exposure clipping, train a residual declipping GAN, evaluate reconstructions."""

__version__ = "0.1.0"
