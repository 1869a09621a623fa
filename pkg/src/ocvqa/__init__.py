"""Object-centric video question answering on synthetic scenes."""

__version__ = "0.1.0"
