import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from causalprobe.errors import ConfigError, ContractError
from causalprobe.objective import (
    DualState, augmented_lagrangian, bce_edge_loss, dual_update, edge_pos_weight, spectral_radius,
)


def bce_oracle(pred, truth, pos_weight=1.0, eps=1e-7):
    f = len(pred)
    total = 0.0
    for i in range(f):
        for j in range(f):
            if i == j:
                continue
            p = min(max(pred[i][j], eps), 1 - eps)
            total -= pos_weight * truth[i][j] * math.log(p) + (1 - truth[i][j]) * math.log(1 - p)
    return total / (f * (f - 1))


def test_uniform_prediction_is_ln2():
    truth = torch.tensor(np.triu(np.ones((6, 6)), 1))
    assert abs(bce_edge_loss(torch.full((6, 6), 0.5, dtype=torch.float64), truth).item() - math.log(2)) < 1e-12


def test_two_node_worked_case():
    pred = torch.tensor([[0.0, 0.8], [0.2, 0.0]], dtype=torch.float64)
    truth = torch.tensor([[0.0, 1.0], [0.0, 0.0]], dtype=torch.float64)
    assert abs(bce_edge_loss(pred, truth).item() - 0.2231435513142097) < 1e-12


def test_perfect_prediction_near_zero():
    truth = torch.tensor(np.triu(np.ones((5, 5)), 1))
    assert bce_edge_loss(truth.clone(), truth).item() <= 1.2e-6


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), f=st.integers(2, 7), pw=st.floats(1.0, 20.0))
def test_bce_matches_loop_oracle(seed, f, pw):
    rng = np.random.default_rng(seed)
    pred = rng.random((f, f))
    truth = (rng.random((f, f)) < 0.3).astype(float)
    np.fill_diagonal(truth, 0)
    got = bce_edge_loss(torch.tensor(pred), torch.tensor(truth), pw).item()
    assert got == pytest.approx(bce_oracle(pred, truth, pw), rel=1e-12, abs=1e-15)


def test_batch_is_mean_of_graphs():
    rng = np.random.default_rng(0)
    pred = torch.tensor(rng.random((3, 4, 4)))
    truth = torch.tensor((rng.random((3, 4, 4)) < 0.4).astype(float))
    pw = torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64)
    each = [bce_edge_loss(pred[b], truth[b], pw[b]).item() for b in range(3)]
    assert bce_edge_loss(pred, truth, pw).item() == pytest.approx(np.mean(each), rel=1e-14)


def test_bce_contract():
    with pytest.raises(ContractError):
        bce_edge_loss(torch.full((3, 3), float("nan")), torch.zeros(3, 3))
    with pytest.raises(ContractError):
        bce_edge_loss(torch.zeros(3, 3), torch.zeros(2, 2))


def test_pos_weight_clipped():
    chain = torch.tensor(np.diag(np.ones(9), 1))  # 9 edges of 90 pairs
    assert edge_pos_weight(chain).item() == 9.0
    one = torch.zeros(10, 10, dtype=torch.float64)
    one[0, 1] = 1
    assert edge_pos_weight(one).item() == 20.0
    assert edge_pos_weight(torch.zeros(4, 4)).item() == 1.0
    assert edge_pos_weight(torch.tensor(np.triu(np.ones((4, 4)), 1))).item() == 1.0


def test_spectral_radius_analytic_cases():
    assert abs(spectral_radius(torch.tensor([[0.0, 1.0], [1.0, 0.0]], dtype=torch.float64)).item() - 1) < 1e-6
    two = torch.tensor([[0.0, 2.0], [3.0, 0.0]], dtype=torch.float64)
    assert abs(spectral_radius(two, 100).item() - math.sqrt(6)) < 1e-4
    upper = torch.tensor(np.triu(np.random.default_rng(0).random((8, 8)), 1))
    assert spectral_radius(upper, 100).item() <= 1e-4


def test_spectral_radius_rejects_negative_entries():
    with pytest.raises(ContractError):
        spectral_radius(torch.tensor([[0.0, -1.0], [1.0, 0.0]]))


def test_spectral_radius_batched_and_differentiable():
    a = torch.rand(4, 5, 5, dtype=torch.float64, requires_grad=True)
    r = spectral_radius(a, 50)
    assert r.shape == (4,)
    r.sum().backward()
    assert torch.isfinite(a.grad).all()
    for b in range(4):
        ref = max(abs(np.linalg.eigvals(a[b].detach().numpy())))
        assert r[b].item() == pytest.approx(ref, rel=1e-6)


def test_augmented_lagrangian_examples():
    dual = DualState(lam=1.0, rho=2.0)
    assert augmented_lagrangian(0.3, 0.0, dual) == 0.3
    assert augmented_lagrangian(0.3, 0.5, dual) == pytest.approx(0.3 + 0.5 + 0.25, abs=1e-15)


def test_dual_state_invariants():
    with pytest.raises(ConfigError):
        DualState(rho=0.0)
    with pytest.raises(ConfigError):
        DualState(lam=-1.0)
    with pytest.raises(ConfigError):
        DualState(tolerance=1.0)


def test_dual_update_rules():
    d = DualState(lam=0.5, rho=1.0, h_last=2.0)
    z = dual_update(d, 0.0)
    assert z.lam == 0.5 and z.rho == 1.0
    stuck = dual_update(d, 2.0)
    assert stuck.rho == 2.0 and stuck.lam == 2.5 and stuck.h_last == 2.0
    progress = dual_update(d, 1.0)
    assert progress.rho == 1.0
    capped = dual_update(DualState(rho=1e4, rho_max=1e4, h_last=1.0), 1.0)
    assert capped.rho == 1e4
    first = dual_update(DualState(), 3.0)  # no previous h: never grows rho
    assert first.rho == 0.1 and first.lam == pytest.approx(0.3)


@settings(max_examples=100, deadline=None)
@given(bce=st.floats(0, 5), lam=st.floats(0, 10), rho=st.floats(1e-3, 100),
       h1=st.floats(0, 10), h2=st.floats(0, 10))
def test_total_monotone_in_h(bce, lam, rho, h1, h2):
    lo, hi = sorted((h1, h2))
    dual = DualState(lam=lam, rho=rho, rho_max=max(rho, 1e4))
    assert augmented_lagrangian(bce, lo, dual) <= augmented_lagrangian(bce, hi, dual)
