"""Meta-path guided contrastive pre-training data builder and desk-scale trainer."""

__version__ = "0.1.0"
