"""Sequence-based drug-target interaction head: structure-aware protein
tokens, SELFIES decoding, attention pooling, contrastive alignment,
bilinear attention fusion and virtual-screening metrics."""

__version__ = "0.1.0"
