"""Attention and feed-forward building blocks shared by encoder and decoder."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


class MultiHeadAttention(nn.Module):
    """Multi-head attention over the second-to-last axis.

    ``query`` has shape ``(..., Lq, d)`` and ``context`` ``(..., Lk, d)``; leading
    axes broadcast, so a context with a singleton axis is shared across queries.
    No positional information is used, so the output is equivariant to query
    order and invariant to context order.
    """

    def __init__(self, d: int, n_heads: int):
        super().__init__()
        if d % n_heads:
            raise ValueError(f"d={d} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.out = nn.Linear(d, d)

    def _split(self, x):
        *lead, length, d = x.shape
        return x.reshape(*lead, length, self.n_heads, d // self.n_heads).transpose(-3, -2)

    def forward(self, query: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        q, k, v = self._split(self.q(query)), self._split(self.k(context)), self._split(self.v(context))
        lead = torch.broadcast_shapes(q.shape[:-2], k.shape[:-2])
        # The fused CPU kernel only handles 4-D (batch, heads, length, dim) inputs.
        q4, k4, v4 = (t.expand(*lead, *t.shape[-2:]).reshape(-1, *t.shape[-3:]) for t in (q, k, v))
        mixed = F.scaled_dot_product_attention(q4, k4, v4).reshape(*lead, *q.shape[-2:]).transpose(-3, -2)
        return self.out(mixed.reshape(*mixed.shape[:-2], -1))


class FeedForward(nn.Module):
    def __init__(self, d: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(d, hidden)
        self.fc2 = nn.Linear(hidden, d)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


def init_params(module: nn.Module, generator: torch.Generator, std: float = 0.02) -> None:
    """normal(0, std) for projection weights, zeros for biases, ones/zeros for norms."""
    with torch.no_grad():
        for sub in module.modules():
            if isinstance(sub, nn.LayerNorm):
                sub.weight.fill_(1.0)
                sub.bias.zero_()
            elif isinstance(sub, nn.Linear):
                sub.weight.copy_(torch.randn(sub.weight.shape, generator=generator, dtype=torch.float64))
                sub.weight.mul_(std)
                if sub.bias is not None:
                    sub.bias.zero_()


def no_decay(name: str, module: nn.Module) -> bool:
    """True for normalization gains and all biases (excluded from weight decay)."""
    owner = module.get_submodule(name.rsplit(".", 1)[0]) if "." in name else module
    return isinstance(owner, nn.LayerNorm) or name.endswith("bias")
