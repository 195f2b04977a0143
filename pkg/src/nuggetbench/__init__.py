"""Nugget-judged retrieval test collections from Q&A pairs and code repositories."""

__version__ = "0.1.0"
