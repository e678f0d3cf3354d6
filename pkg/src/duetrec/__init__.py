"""Duet click-through recommender: a text-side local model and a
knowledge-graph global model fused into one click probability."""
__version__ = "0.1.0"
