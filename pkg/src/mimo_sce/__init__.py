"""Multichannel speech compression and enhancement with a convolutional autoencoder."""

__version__ = "0.1.0"
