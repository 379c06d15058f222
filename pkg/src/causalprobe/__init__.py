"""Probe a frozen dual-attention tabular encoder for causal structure.

The package is organised as a pipeline: ``datagen`` samples DAGs, SCMs and
datasets; ``encoder`` holds the frozen cell embedding and dual-attention
stack; ``decoder`` holds the learnable causal tokens, the cross-attention
decoder and the adjacency head; ``objective`` and ``training`` optimise the
learnable parts; ``evaluation`` scores and ablates trained models.
"""

__version__ = "0.1.0"
