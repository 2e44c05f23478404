"""Separated modal-generic / modal-unique representation learning for multimodal recommendation."""

__version__ = "0.1.0"
