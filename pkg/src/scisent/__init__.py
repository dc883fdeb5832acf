"""Contrastive (batch-all triplet) sentence embeddings for rhetorical labels in
scientific articles, with clustering and classification evaluation."""

__version__ = "0.1.0"
