"""Motion/text cross-modal retrieval with false-negative-pruned triplet losses."""

__version__ = "0.1.0"
