"""Table-text fused-block retrieval engine.

A fused block is one table row joined with the passages entity-linked to
it; blocks are the retrieval unit throughout. The package covers the full
pipeline: corpus ingestion and block construction, BM25 indexing, training
a false-positive detector to denoise ambiguous supervision, a rank-aware
encoder for numeric columns, a trainable dual dense encoder with
contrastive loss, brute-force dense search, and recall@k evaluation with
an ablation harness.
"""

__version__ = "0.1.0"
