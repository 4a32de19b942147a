"""lesionkit: desk-scale CT lesion detection, tagging and measurement."""

__version__ = "0.1.0"
