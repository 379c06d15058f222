"""Frozen cell embedding and dual-attention encoder stack.

Each cell ``(value, intervention flag)`` is mapped by an affine projection to
a ``d``-vector, giving tokens of shape ``(..., n, f, d)``. Every encoder layer
applies self-attention across features (per sample) and then across samples
(per feature), each followed by a feed-forward sublayer, in pre-norm residual
form. Parameters never receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from .blocks import FeedForward, MultiHeadAttention, init_params
from .errors import ConfigError, ContractError
from .tensorio import load_tensors, save_tensors, state_hash

RANDOM = "random"
FILE = "file"
BYPASS = "bypass"
WEIGHT_SOURCES = (RANDOM, FILE, BYPASS)


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 32
    n_layers: int = 4
    n_heads: int = 4
    ff_hidden: int = 128
    weight_source: str = RANDOM
    weight_path: Optional[str] = None
    weight_seed: int = 0

    def validate(self) -> None:
        if self.d < 1 or self.n_heads < 1 or self.d % self.n_heads:
            raise ConfigError(f"encoder.d={self.d} must be a positive multiple of encoder.n_heads={self.n_heads}")
        if self.n_layers < 1:
            raise ConfigError(f"encoder.n_layers must be >= 1, got {self.n_layers}")
        if self.ff_hidden < 1:
            raise ConfigError(f"encoder.ff_hidden must be >= 1, got {self.ff_hidden}")
        if self.weight_source not in WEIGHT_SOURCES:
            raise ConfigError(f"encoder.weight_source must be one of {WEIGHT_SOURCES}, got {self.weight_source!r}")
        if self.weight_source == FILE and not self.weight_path:
            raise ConfigError("encoder.weight_path is required when encoder.weight_source='file'")


class EncoderLayer(nn.Module):
    def __init__(self, d: int, n_heads: int, ff_hidden: int):
        super().__init__()
        self.norm_feat = nn.LayerNorm(d)
        self.feat_attn = MultiHeadAttention(d, n_heads)
        self.norm_ff1 = nn.LayerNorm(d)
        self.ff1 = FeedForward(d, ff_hidden)
        self.norm_samp = nn.LayerNorm(d)
        self.samp_attn = MultiHeadAttention(d, n_heads)
        self.norm_ff2 = nn.LayerNorm(d)
        self.ff2 = FeedForward(d, ff_hidden)

    def forward(self, x: torch.Tensor, context: Optional[torch.Tensor] = None) -> torch.Tensor:
        """x: (..., n, f, d). With ``context`` (..., m, f, d), the rows of x attend across
        samples to the context rows (taken before this layer) instead of to each other."""
        h = self.norm_feat(x)
        x = x + self.feat_attn(h, h)
        x = x + self.ff1(self.norm_ff1(x))
        if context is None:
            context = x
        else:
            context = context + self.feat_attn(self.norm_feat(context), self.norm_feat(context))
            context = context + self.ff1(self.norm_ff1(context))
        xt = x.transpose(-3, -2)
        h = self.norm_samp(xt)
        ctx = h if context is x else self.norm_samp(context.transpose(-3, -2))
        xt = xt + self.samp_attn(h, ctx)
        xt = xt + self.ff2(self.norm_ff2(xt))
        return xt.transpose(-3, -2)


class Encoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.embed = nn.Linear(2, config.d)
        self.layers = nn.ModuleList(
            EncoderLayer(config.d, config.n_heads, config.ff_hidden) for _ in range(config.n_layers)
        )
        self.requires_grad_(False)

    @classmethod
    def from_config(cls, config: EncoderConfig) -> "Encoder":
        enc = cls(config)
        if config.weight_source == FILE:
            enc.load_weights(config.weight_path)
        else:
            enc.init_random(config.weight_seed)
        return enc

    @property
    def bypass(self) -> bool:
        return self.config.weight_source == BYPASS

    def init_random(self, seed: int) -> None:
        init_params(self, torch.Generator().manual_seed(seed))
        self.requires_grad_(False)

    def tensors(self) -> dict[str, torch.Tensor]:
        return {k: v.detach().clone() for k, v in self.state_dict().items()}

    def weights_hash(self) -> str:
        return state_hash(self.state_dict())

    def save_weights(self, path) -> None:
        c = self.config
        meta = {"kind": "encoder", "d": c.d, "n_layers": c.n_layers, "n_heads": c.n_heads,
                "ff_hidden": c.ff_hidden}
        save_tensors(path, self.state_dict(), meta)

    def load_weights(self, path) -> None:
        """Install weights from a tensor archive; nothing is changed unless every shape matches."""
        tensors, _ = load_tensors(path)
        own = self.state_dict()
        problems = []
        for name, ref in own.items():
            if name not in tensors:
                problems.append(f"  {name}: expected {tuple(ref.shape)}, found <missing>")
            elif tuple(tensors[name].shape) != tuple(ref.shape):
                problems.append(f"  {name}: expected {tuple(ref.shape)}, found {tuple(tensors[name].shape)}")
        problems += [f"  {name}: unexpected tensor" for name in sorted(set(tensors) - set(own))]
        if problems:
            raise ConfigError(f"encoder weight file {path} does not match the configuration:\n" + "\n".join(problems))
        new_state = {name: torch.as_tensor(tensors[name]).to(ref.dtype) for name, ref in own.items()}
        self.load_state_dict(new_state)
        self.requires_grad_(False)

    def embed_cells(self, values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """(..., n, f) values and flags -> (..., n, f, d) tokens."""
        if values.shape != mask.shape:
            raise ContractError(f"values {tuple(values.shape)} and mask {tuple(mask.shape)} differ")
        if not torch.isfinite(values).all():
            raise ContractError("embed_cells received non-finite values")
        cells = torch.stack([values, mask.to(values.dtype)], dim=-1)
        return self.embed(cells)

    def encode(self, tokens: torch.Tensor, upto_layer: int, *, return_all: bool = False):
        """Apply layers ``1..upto_layer``; with ``return_all`` return ``[H_0, ..., H_upto]``."""
        self._check_depth(upto_layer)
        outs = [tokens]
        x = tokens
        for layer in self.layers[:upto_layer]:
            x = layer(x)
            outs.append(x)
        return outs if return_all else x

    def encode_queries(self, queries: torch.Tensor, data_layers, upto_layer: int) -> torch.Tensor:
        """Run extra query rows through the layers as read-only test rows.

        ``data_layers`` is ``[H_0, ..., H_upto]`` from :meth:`encode`. Query rows
        attend across samples to the data rows only; data rows never see the
        queries, so this equals encoding the concatenation with a one-way mask.
        """
        self._check_depth(upto_layer)
        x = queries
        for i, layer in enumerate(self.layers[:upto_layer]):
            x = layer(x, context=data_layers[i])
        return x

    def _check_depth(self, upto_layer: int) -> None:
        if not 0 <= upto_layer <= len(self.layers):
            raise ContractError(f"upto_layer={upto_layer} outside [0, {len(self.layers)}]")

    def train(self, mode: bool = True):
        # Frozen: always behave as in eval mode.
        return super().train(False)
