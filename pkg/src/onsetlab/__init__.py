"""onsetlab: CNN-based musical onset detection on log-mel spectrograms."""

__version__ = "0.1.0"
