"""Adversarial hard-negative training and multi-scale matching for answer ranking."""

__version__ = "0.1.0"
