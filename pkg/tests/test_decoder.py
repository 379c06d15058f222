import math

import numpy as np
import pytest
import torch

from causalprobe.decoder import (
    NO_DECODER, AdjacencyHead, CausalTokenBank, Decoder, DecoderConfig, aggregate, build_learnables,
    predict_adjacency,
)
from causalprobe.encoder import BYPASS, EncoderConfig
from causalprobe.errors import ConfigError, ContractError
from causalprobe.model import CausalProbe


def test_bank_layout_and_bounds():
    bank = CausalTokenBank(20, 3, 4)
    with torch.no_grad():
        bank.table.copy_(torch.arange(20 * 12, dtype=torch.float32).reshape(20, 12))
    q0 = bank(5)
    assert q0.shape == (3, 5, 4)
    for s in range(3):
        for i in range(5):
            assert torch.equal(q0[s, i], bank.table[i, s * 4:(s + 1) * 4])
    assert bank(20).shape == (3, 20, 4)
    assert torch.equal(bank(5), bank(5))
    with pytest.raises(ContractError):
        bank(21)


def test_unused_bank_rows_get_zero_gradient():
    model = CausalProbe.from_configs(EncoderConfig(d=16, n_layers=2, n_heads=2, ff_hidden=32),
                                     DecoderConfig(n_tokens=4, n_heads=2, ff_hidden=32), 2)
    model(torch.randn(2, 12, 5), torch.zeros(2, 12, 5)).sum().backward()
    grad = model.bank.table.grad
    assert torch.count_nonzero(grad[5:]) == 0
    assert torch.count_nonzero(grad[:5]) > 0


def test_zeroed_output_projections_leave_tokens_unchanged():
    dec = Decoder(8, 2, 2, 16)
    for layer in dec.layers:
        for attn in (layer.samp_attn, layer.feat_attn):
            torch.nn.init.zeros_(attn.out.weight)
            torch.nn.init.zeros_(attn.out.bias)
        for ff in (layer.ff1, layer.ff2):
            last = [m for m in ff.modules() if isinstance(m, torch.nn.Linear)][-1]
            torch.nn.init.zeros_(last.weight)
            torch.nn.init.zeros_(last.bias)
    q0 = torch.randn(3, 4, 8)
    out = dec(q0, [torch.randn(2, 10, 4, 8)] * 2)
    assert torch.equal(out, q0.expand(2, 3, 4, 8))


def test_decoder_shape_checks():
    dec = Decoder(8, 1, 2, 16)
    with pytest.raises(ContractError):
        dec(torch.randn(3, 4, 8), [torch.randn(2, 10, 5, 8)])
    with pytest.raises(ContractError):
        dec(torch.randn(3, 4, 8), [torch.randn(2, 10, 4, 8)] * 2)


def test_aggregate_degenerate_and_two_token_cases():
    v = torch.randn(4, 6)
    same = aggregate(v.expand(5, 4, 6))
    assert torch.equal(same[:, :6], v) and torch.equal(same[:, 6:12], v)
    assert torch.allclose(same[:, 12:18], v) and torch.count_nonzero(same[:, 18:]) == 0
    pair = aggregate(torch.stack([v, -v]))
    assert torch.equal(pair[:, :6], v.abs()) and torch.equal(pair[:, 6:12], -v.abs())
    assert torch.count_nonzero(pair[:, 12:18]) == 0
    assert torch.allclose(pair[:, 18:], v.abs())
    with pytest.raises(ContractError):
        aggregate(torch.randn(1, 4, 6))


def test_zero_head_gives_half():
    head = AdjacencyHead(8, 4)
    torch.nn.init.zeros_(head.parent.weight)
    torch.nn.init.zeros_(head.child.weight)
    p = predict_adjacency(torch.randn(5, 8), head)
    off = ~torch.eye(5, dtype=torch.bool)
    assert (p[off] == 0.5).all() and (p.diagonal() == 0).all()


def test_tied_head_symmetric():
    head = AdjacencyHead(8, 4)
    head.child.weight = head.parent.weight
    reps = torch.randn(1, 8).expand(3, 8)
    p = predict_adjacency(reps, head)
    assert torch.equal(p, p.T)


def test_rank_one_closed_form():
    head = AdjacencyHead(2, 1).double()
    with torch.no_grad():
        head.parent.weight.copy_(torch.tensor([[1.0, 0.0]]))
        head.child.weight.copy_(torch.tensor([[0.0, 1.0]]))
    reps = torch.tensor([[0.5, -1.0], [2.0, 0.25], [-1.5, 3.0]], dtype=torch.float64)
    p = predict_adjacency(reps, head)
    for i in range(3):
        for j in range(3):
            expect = 0.0 if i == j else 1 / (1 + math.exp(-reps[i, 0].item() * reps[j, 1].item()))
            assert abs(p[i, j].item() - expect) <= 1e-12


def test_non_finite_reps_rejected():
    with pytest.raises(ContractError):
        predict_adjacency(torch.tensor([[float("inf"), 0.0]] * 2), AdjacencyHead(2, 2))


def test_config_defaults_follow_layer_choice():
    assert DecoderConfig().resolved_layers(4) == 4
    assert DecoderConfig().resolved_layers(0) == 1
    assert DecoderConfig(n_layers=3).resolved_layers(1) == 3
    with pytest.raises(ConfigError):
        DecoderConfig(n_tokens=1).validate()
    with pytest.raises(ConfigError):
        DecoderConfig(variant="deep").validate()
    bank, dec, head = build_learnables(8, DecoderConfig(variant=NO_DECODER, n_heads=2), 2)
    assert dec is None


def test_bypass_forces_layer_zero():
    enc = EncoderConfig(d=16, n_layers=2, n_heads=2, ff_hidden=32, weight_source=BYPASS)
    model = CausalProbe.from_configs(enc, DecoderConfig(n_tokens=4, n_heads=2, ff_hidden=32), 2)
    assert model.layer == 0


@pytest.mark.parametrize("variant", ["standard", "evolving", "none"])
def test_model_output_is_probability_matrix(variant):
    model = CausalProbe.from_configs(EncoderConfig(d=16, n_layers=2, n_heads=2, ff_hidden=32),
                                     DecoderConfig(variant=variant, n_tokens=4, n_heads=2, ff_hidden=32), 2)
    p = model(torch.randn(3, 10, 6), torch.zeros(3, 10, 6))
    assert p.shape == (3, 6, 6)
    assert ((p >= 0) & (p <= 1)).all() and (p.diagonal(dim1=-2, dim2=-1) == 0).all()
    assert all(not n.startswith("encoder.") for n, _ in model.learnable_parameters())


def _tiny_model(variant="standard", layer=2, seed=0):
    return CausalProbe.from_configs(EncoderConfig(d=16, n_layers=2, n_heads=2, ff_hidden=32),
                                    DecoderConfig(variant=variant, n_tokens=4, n_heads=2, ff_hidden=32), layer, seed)


@pytest.mark.parametrize("variant", ["standard", "none"])
def test_feature_equivariance_with_tied_bank_rows(variant):
    model = _tiny_model(variant)
    with torch.no_grad():
        model.bank.table.copy_(model.bank.table[:1].expand_as(model.bank.table))
    x, m = torch.randn(1, 12, 5), torch.zeros(1, 12, 5)
    perm = torch.randperm(5)
    p = model(x, m)
    torch.testing.assert_close(model(x[..., perm], m[..., perm]), p[:, perm][:, :, perm], rtol=1e-5, atol=1e-5)


def test_evolving_equals_standard_when_layers_are_identities():
    std, evo = _tiny_model("standard"), _tiny_model("evolving")
    for model in (std, evo):
        for layer in model.encoder.layers:
            for lin in (layer.feat_attn.out, layer.samp_attn.out, layer.ff1.fc2, layer.ff2.fc2):
                torch.nn.init.zeros_(lin.weight)
                torch.nn.init.zeros_(lin.bias)
    x, m = torch.randn(2, 10, 4), torch.zeros(2, 10, 4)
    assert torch.equal(std(x, m), evo(x, m))
