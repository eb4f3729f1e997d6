"""Phrase-level personalized dialogue generation with a personal control gate."""

__version__ = "0.1.0"
