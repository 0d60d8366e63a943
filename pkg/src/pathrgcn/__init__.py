"""Path-based reasoning graphs and a question-gated relational GCN for multi-hop QA."""

__version__ = "0.1.0"
