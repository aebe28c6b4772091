"""Residual CNN denoising of ASL perfusion maps, trained from scratch in numpy."""

__version__ = "0.1.0"
