"""Location-aware GAN for sparse 25x25 jet images."""

__version__ = "0.1.0"
