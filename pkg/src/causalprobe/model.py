"""End-to-end model: frozen encoder, causal tokens, decoder and adjacency head."""

from __future__ import annotations

import torch
from torch import nn

from .decoder import EVOLVING, NO_DECODER, DecoderConfig, aggregate, build_learnables
from .encoder import Encoder, EncoderConfig
from .errors import ConfigError, ContractError
from .tensorio import state_hash


class CausalProbe(nn.Module):
    """Predict edge probabilities from a dataset.

    ``layer`` selects which encoder output the decoder reads; it is forced to
    0 when the encoder is in bypass mode (embeddings only).
    """

    def __init__(self, encoder: Encoder, decoder_config: DecoderConfig, layer: int, seed: int = 0):
        super().__init__()
        if not 0 <= layer <= encoder.config.n_layers:
            raise ConfigError(f"layer choice {layer} outside [0, {encoder.config.n_layers}]")
        self.encoder = encoder
        self.decoder_config = decoder_config
        self.layer = 0 if encoder.bypass else layer
        self.bank, self.decoder, self.head = build_learnables(
            encoder.config.d, decoder_config, self.layer, seed
        )

    @classmethod
    def from_configs(cls, encoder_config: EncoderConfig, decoder_config: DecoderConfig, layer: int, seed: int = 0):
        return cls(Encoder.from_config(encoder_config), decoder_config, layer, seed)

    @property
    def variant(self) -> str:
        return self.decoder_config.variant

    def learnable_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if not n.startswith("encoder.")]

    def learnable_state(self) -> dict[str, torch.Tensor]:
        return {k: v for k, v in self.state_dict().items() if not k.startswith("encoder.")}

    def encoder_hash(self) -> str:
        return state_hash(self.encoder.state_dict())

    def representations(self, values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """(B, n, f) inputs -> (B, f, 4d) feature representations."""
        if values.dim() != 3:
            raise ContractError(f"expected batched (B, n, f) values, got shape {tuple(values.shape)}")
        f = values.shape[-1]
        if f > self.bank.max_features:
            raise ContractError(f"f={f} exceeds the token bank size {self.bank.max_features}")
        q0 = self.bank(f)
        with torch.no_grad():
            h0 = self.encoder.embed_cells(values, mask)
            hs = self.encoder.encode(h0, self.layer, return_all=True)
        if self.variant == NO_DECODER:
            t, d = q0.shape[0], q0.shape[-1]
            r = self.encoder.encode_queries(q0.expand(values.shape[0], t, f, d), hs, self.layer)
        else:
            n_dec = len(self.decoder.layers)
            if self.variant == EVOLVING:
                sources = [hs[min(i, self.layer)] for i in range(1, n_dec + 1)]
            else:
                sources = [hs[self.layer]] * n_dec
            r = self.decoder(q0, sources)
        return aggregate(r)

    def forward(self, values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self.head(self.representations(values, mask))
