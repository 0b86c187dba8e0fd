"""Probabilistic radiance fields trained with patch-based adversarial learning."""

__version__ = "0.1.0"
