"""Contextual UNet trainer for 32x32x32 phantom volumes."""

__version__ = "0.1.0"
