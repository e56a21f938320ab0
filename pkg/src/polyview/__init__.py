"""Multi-view document reranking and retrieval-augmented generation evaluation."""

__version__ = "0.1.0"
