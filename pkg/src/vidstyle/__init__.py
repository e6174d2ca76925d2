"""Artistic style transfer for images and videos with temporal consistency."""

__version__ = "0.1.0"
