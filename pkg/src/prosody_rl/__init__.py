"""Prosody as a teaching signal: feature extraction, grid-world oracles,
prosody-augmented TAMER, contrastive reward learning, synthetic teachers,
analysis pipelines, and a live teaching service."""

__version__ = "0.1.0"
