"""Air-quality matrix completion with a variational graph autoencoder."""

__version__ = "0.1.0"
