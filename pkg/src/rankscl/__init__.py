"""Supervised contrastive learning for document re-ranking at desk scale."""

__version__ = "0.1.0"
