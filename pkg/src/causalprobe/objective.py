"""Edge BCE, spectral-radius acyclicity penalty and augmented Lagrangian."""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch

from .errors import ConfigError, ContractError

PROB_EPS = 1e-7
POS_WEIGHT_RANGE = (1.0, 20.0)
POWER_EPS = 1e-6


def edge_pos_weight(truth: torch.Tensor) -> torch.Tensor:
    """Per-graph positive weight ``#non-edges / #edges`` clipped to [1, 20]; 1 for empty graphs."""
    f = truth.shape[-1]
    edges = truth.sum(dim=(-1, -2))
    non_edges = f * (f - 1) - edges
    ratio = non_edges / edges.clamp(min=1)
    ratio = ratio.clamp(*POS_WEIGHT_RANGE)
    return torch.where(edges > 0, ratio, torch.ones_like(ratio))


def bce_edge_loss(pred: torch.Tensor, truth: torch.Tensor, pos_weight=1.0, eps: float = PROB_EPS) -> torch.Tensor:
    """Mean binary cross-entropy over the f(f-1) off-diagonal entries.

    Works on a single (f, f) matrix or a batch (B, f, f); for a batch the
    per-graph losses are averaged. ``pos_weight`` (scalar or per-graph)
    multiplies the positive terms; 1 gives the unweighted loss.
    """
    if pred.shape != truth.shape or pred.shape[-1] != pred.shape[-2]:
        raise ContractError(f"pred {tuple(pred.shape)} and truth {tuple(truth.shape)} must be equal square shapes")
    if not torch.isfinite(pred).all():
        raise ContractError("non-finite predictions")
    f = pred.shape[-1]
    truth = truth.to(pred.dtype)
    p = pred.clamp(eps, 1.0 - eps)
    pw = torch.as_tensor(pos_weight, dtype=pred.dtype)
    if pw.dim() > 0:
        pw = pw.reshape(pw.shape + (1, 1))
    terms = pw * truth * torch.log(p) + (1.0 - truth) * torch.log1p(-p)
    off_diag = 1.0 - torch.eye(f, dtype=pred.dtype)
    per_graph = -(terms * off_diag).sum(dim=(-1, -2)) / (f * (f - 1))
    return per_graph.mean()


def spectral_radius(adj_like: torch.Tensor, n_iters: int = 20, eps: float = POWER_EPS) -> torch.Tensor:
    """Differentiable spectral-radius estimate of a nonnegative (..., f, f) matrix.

    Power iteration on ``M = A + eps*I`` from the all-ones vector, normalised
    each step. The estimate ``sqrt(v' M^2 v) - eps`` is a Rayleigh quotient of
    ``M^2``, which also resolves period-2 spectra (eigenvalues +-r) where the
    plain quotient ``v' M v`` oscillates.
    """
    if n_iters < 1:
        raise ContractError(f"n_iters must be >= 1, got {n_iters}")
    if not torch.isfinite(adj_like).all():
        raise ContractError("matrix has non-finite entries")
    if (adj_like < 0).any():
        raise ContractError("matrix has negative entries")
    f = adj_like.shape[-1]
    m = adj_like + eps * torch.eye(f, dtype=adj_like.dtype)
    v = torch.ones(adj_like.shape[:-1], dtype=adj_like.dtype).unsqueeze(-1) / f ** 0.5
    for _ in range(n_iters):
        w = m @ v
        v = w / w.norm(dim=-2, keepdim=True)
    quad = (v * (m @ (m @ v))).sum(dim=(-1, -2))
    return quad.clamp(min=0).sqrt() - eps


@dataclass(frozen=True)
class DualState:
    lam: float = 0.0
    rho: float = 0.1
    h_last: float = float("inf")
    period: int = 500
    growth: float = 2.0
    tolerance: float = 0.9
    rho_max: float = 1e4

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"dual lambda must be >= 0, got {self.lam}")
        if not self.rho > 0:
            raise ConfigError(f"dual rho must be > 0, got {self.rho}")
        if not self.growth > 1:
            raise ConfigError(f"dual growth factor must be > 1, got {self.growth}")
        if not 0 < self.tolerance < 1:
            raise ConfigError(f"dual tolerance must lie in (0, 1), got {self.tolerance}")
        if self.period < 1:
            raise ConfigError(f"dual update period must be >= 1, got {self.period}")
        if self.rho_max < self.rho:
            raise ConfigError(f"rho_max={self.rho_max} below rho={self.rho}")


def augmented_lagrangian(loss_bce, h, dual: DualState):
    """``loss_bce + lam*h + rho/2*h^2``."""
    return loss_bce + dual.lam * h + 0.5 * dual.rho * h * h


def dual_update(dual: DualState, h: float) -> DualState:
    """Ascent on lambda; grow rho when h failed to shrink below tolerance * h_last."""
    h = float(h)
    rho = dual.rho
    if h > dual.tolerance * dual.h_last:
        rho = min(dual.growth * rho, dual.rho_max)
    return replace(dual, lam=dual.lam + dual.rho * h, rho=rho, h_last=h)
