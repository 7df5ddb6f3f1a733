"""Lexicon-guided summarization with post-editing correction."""

__version__ = "0.1.0"
