"""Text-policy reinforcement learning on small card and number-line games."""

__version__ = "0.1.0"
