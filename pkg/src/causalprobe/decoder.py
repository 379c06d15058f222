"""Learnable causal tokens, cross-attention decoder, aggregation and DAG head."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
from torch import nn

from .blocks import FeedForward, MultiHeadAttention, init_params
from .errors import ConfigError, ContractError

STANDARD = "standard"
EVOLVING = "evolving"
NO_DECODER = "none"
VARIANTS = (STANDARD, EVOLVING, NO_DECODER)
N_STATS = 4  # max, min, mean, std


@dataclass(frozen=True)
class DecoderConfig:
    """``n_layers`` and ``head_dim`` default to the encoder layer choice and ``d``."""

    variant: str = STANDARD
    n_tokens: int = 8
    n_layers: Optional[int] = None
    n_heads: int = 4
    ff_hidden: int = 128
    head_dim: Optional[int] = None
    max_features: int = 20

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"decoder.variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.n_tokens < 2:
            raise ConfigError(f"decoder.n_tokens must be >= 2 for the std statistic, got {self.n_tokens}")
        if self.n_layers is not None and self.n_layers < 1:
            raise ConfigError(f"decoder.n_layers must be >= 1, got {self.n_layers}")
        if self.max_features < 2:
            raise ConfigError(f"decoder.max_features must be >= 2, got {self.max_features}")
        if self.head_dim is not None and self.head_dim < 1:
            raise ConfigError(f"decoder.head_dim must be >= 1, got {self.head_dim}")

    def resolved_layers(self, layer_choice: int) -> int:
        return self.n_layers if self.n_layers is not None else max(1, layer_choice)


class CausalTokenBank(nn.Module):
    """Table of shape ``(max_features, t * d)``; row ``i`` holds the t tokens of feature ``i``."""

    def __init__(self, max_features: int, n_tokens: int, d: int):
        super().__init__()
        self.n_tokens, self.d = n_tokens, d
        self.table = nn.Parameter(torch.zeros(max_features, n_tokens * d))

    @property
    def max_features(self) -> int:
        return self.table.shape[0]

    def forward(self, f: int) -> torch.Tensor:
        """Q0 of shape (t, f, d): Q0[s, i] = table[i, s*d:(s+1)*d]."""
        if not 1 <= f <= self.max_features:
            raise ContractError(f"f={f} outside [1, {self.max_features}]")
        return self.table[:f].reshape(f, self.n_tokens, self.d).transpose(0, 1)


class DecoderLayer(nn.Module):
    def __init__(self, d: int, n_heads: int, ff_hidden: int):
        super().__init__()
        self.norm_q_samp = nn.LayerNorm(d)
        self.norm_kv_samp = nn.LayerNorm(d)
        self.samp_attn = MultiHeadAttention(d, n_heads)
        self.norm_ff1 = nn.LayerNorm(d)
        self.ff1 = FeedForward(d, ff_hidden)
        self.norm_q_feat = nn.LayerNorm(d)
        self.norm_kv_feat = nn.LayerNorm(d)
        self.feat_attn = MultiHeadAttention(d, n_heads)
        self.norm_ff2 = nn.LayerNorm(d)
        self.ff2 = FeedForward(d, ff_hidden)

    def forward(self, r: torch.Tensor, source: torch.Tensor) -> torch.Tensor:
        # r: (B, t, f, d) causal tokens; source: (B, n, f, d) data tokens.
        q = self.norm_q_samp(r).transpose(-3, -2)  # (B, f, t, d)
        kv = self.norm_kv_samp(source).transpose(-3, -2)  # (B, f, n, d)
        r = r + self.samp_attn(q, kv).transpose(-3, -2)
        r = r + self.ff1(self.norm_ff1(r))
        # Across features: every causal row attends to the sample-pooled data tokens.
        pooled = self.norm_kv_feat(source.mean(dim=-3)).unsqueeze(-3)  # (B, 1, f, d)
        r = r + self.feat_attn(self.norm_q_feat(r), pooled)
        r = r + self.ff2(self.norm_ff2(r))
        return r


class Decoder(nn.Module):
    def __init__(self, d: int, n_layers: int, n_heads: int, ff_hidden: int):
        super().__init__()
        self.layers = nn.ModuleList(DecoderLayer(d, n_heads, ff_hidden) for _ in range(n_layers))

    def forward(self, q0: torch.Tensor, sources: Sequence[torch.Tensor]) -> torch.Tensor:
        """Q0 (t, f, d) and one (B, n, f, d) source per layer -> R_L (B, t, f, d)."""
        if len(sources) != len(self.layers):
            raise ContractError(f"decoder has {len(self.layers)} layers but got {len(sources)} sources")
        batch = sources[0].shape[:-3]
        t, f, d = q0.shape
        for s in sources:
            if s.shape[-2:] != (f, d):
                raise ContractError(f"source shape {tuple(s.shape)} incompatible with tokens (t={t}, f={f}, d={d})")
        r = q0.expand(*batch, t, f, d)
        for layer, source in zip(self.layers, sources):
            r = layer(r, source)
        return r


def aggregate(r: torch.Tensor) -> torch.Tensor:
    """Reduce the token axis of (..., t, f, d) with max, min, mean, population std -> (..., f, 4d)."""
    if r.shape[-3] < 2:
        raise ContractError(f"aggregation needs t >= 2 tokens, got {r.shape[-3]}")
    return torch.cat(
        [r.amax(dim=-3), r.amin(dim=-3), r.mean(dim=-3), r.std(dim=-3, unbiased=False)], dim=-1
    )


class AdjacencyHead(nn.Module):
    """Parent/child projections and scaled dot-product edge logits."""

    def __init__(self, in_dim: int, head_dim: int):
        super().__init__()
        self.parent = nn.Linear(in_dim, head_dim, bias=False)
        self.child = nn.Linear(in_dim, head_dim, bias=False)

    def logits(self, reps: torch.Tensor) -> torch.Tensor:
        p, c = self.parent(reps), self.child(reps)
        return p @ c.transpose(-1, -2) / math.sqrt(p.shape[-1])

    def forward(self, reps: torch.Tensor) -> torch.Tensor:
        return predict_adjacency(reps, self)


def predict_adjacency(reps: torch.Tensor, head: AdjacencyHead) -> torch.Tensor:
    """(..., f, k*d) feature representations -> (..., f, f) edge probabilities, zero diagonal."""
    if not torch.isfinite(reps).all():
        raise ContractError("feature representations contain non-finite values")
    probs = torch.sigmoid(head.logits(reps))
    f = probs.shape[-1]
    off_diag = 1.0 - torch.eye(f, dtype=probs.dtype, device=probs.device)
    return probs * off_diag


def build_learnables(d: int, config: DecoderConfig, layer_choice: int, seed: int = 0):
    """Create (bank, decoder or None, head); normal(0, 0.02) init drawn from ``seed``."""
    config.validate()
    gen = torch.Generator().manual_seed(seed)
    bank = CausalTokenBank(config.max_features, config.n_tokens, d)
    with torch.no_grad():
        bank.table.copy_(0.02 * torch.randn(bank.table.shape, generator=gen, dtype=torch.float64))
    decoder = None
    if config.variant != NO_DECODER:
        decoder = Decoder(d, config.resolved_layers(layer_choice), config.n_heads, config.ff_hidden)
        init_params(decoder, gen)
    head = AdjacencyHead(N_STATS * d, config.head_dim or d)
    init_params(head, gen)
    return bank, decoder, head
