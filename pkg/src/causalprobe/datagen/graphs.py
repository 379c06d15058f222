"""Random DAG sampling over six graph families.

Undirected families (Erdos-Renyi, Watts-Strogatz, stochastic block model,
geometric random graph) first sample a symmetric skeleton and then orient every
edge from lower to higher rank under a uniformly random node permutation.
Scale-free graphs are grown by preferential attachment and relabelled by a
random permutation afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from ..errors import ConfigError, ContractError

ER = "erdos_renyi"
SF_IN = "scale_free_in"
SF_OUT = "scale_free_out"
WS = "watts_strogatz"
SBM = "stochastic_block"
GRG = "geometric_random"

FAMILIES = (ER, SF_IN, SF_OUT, WS, SBM, GRG)

# Parameter domains; every value is drawn uniformly from its tuple.
PARAM_DOMAINS: dict[str, dict[str, tuple]] = {
    ER: {"edges_per_node": (1, 2, 3)},
    SF_IN: {"edges_per_node": (1, 2, 3), "alpha": (0.7, 1.0, 1.2, 1.5)},
    SF_OUT: {"edges_per_node": (1, 2, 3), "alpha": (0.7, 1.0, 1.2, 1.5)},
    WS: {"lattice_k": (2, 3), "rewire_prob": (0.2, 0.4)},
    SBM: {"edges_per_node": (1, 2, 3), "blocks": (2, 5, 10), "damping": (0.1,)},
    GRG: {"radius": (0.08, 0.1, 0.15)},
}


@dataclass(frozen=True)
class GraphFamilyConfig:
    family: str
    params: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.family not in PARAM_DOMAINS:
            raise ConfigError(f"unknown graph family {self.family!r}; expected one of {FAMILIES}")
        domains = PARAM_DOMAINS[self.family]
        missing = set(domains) - set(self.params)
        extra = set(self.params) - set(domains)
        if missing or extra:
            raise ConfigError(
                f"{self.family}: parameters must be exactly {sorted(domains)}, got {sorted(self.params)}"
            )
        for name, value in self.params.items():
            if value not in domains[name]:
                raise ConfigError(f"{self.family}.{name}={value!r} not in {domains[name]}")


class Dag:
    """Binary adjacency matrix of a directed acyclic graph.

    ``adj[i, j] == 1`` encodes the edge ``i -> j``.
    """

    __slots__ = ("adj",)

    def __init__(self, adj):
        adj = np.asarray(adj)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ContractError(f"adjacency must be square, got shape {adj.shape}")
        if adj.shape[0] < 2:
            raise ContractError("a Dag needs at least 2 nodes")
        if not np.isin(adj, (0, 1)).all():
            raise ContractError("adjacency entries must be 0 or 1")
        adj = adj.astype(np.uint8)
        if np.any(np.diag(adj)):
            raise ContractError("adjacency diagonal must be zero")
        if not is_acyclic(adj):
            raise ContractError("adjacency contains a directed cycle")
        adj.setflags(write=False)
        self.adj = adj

    @property
    def f(self) -> int:
        return self.adj.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adj.sum())

    def parents(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.adj[:, j])

    def topological_order(self) -> list[int]:
        """Kahn's algorithm, breaking ties by smallest node index."""
        indeg = self.adj.sum(axis=0).astype(int)
        ready = sorted(np.flatnonzero(indeg == 0).tolist())
        order = []
        while ready:
            u = ready.pop(0)
            order.append(u)
            for v in np.flatnonzero(self.adj[u]):
                indeg[v] -= 1
                if indeg[v] == 0:
                    ready.append(int(v))
            ready.sort()
        return order

    def __eq__(self, other):
        return isinstance(other, Dag) and np.array_equal(self.adj, other.adj)

    def __repr__(self):
        return f"Dag(f={self.f}, edges={self.n_edges})"


def is_acyclic(adj: np.ndarray) -> bool:
    """True iff the f-th boolean power of ``adj`` vanishes (nilpotency)."""
    a = (np.asarray(adj) != 0).astype(np.int64)
    f = a.shape[0]
    power = a.copy()
    for _ in range(f - 1):
        power = np.minimum(power @ a, 1)
        if not power.any():
            return True
    return not power.any()


def sample_graph_config(rng: np.random.Generator, families: Sequence[str] = FAMILIES) -> GraphFamilyConfig:
    families = tuple(families)
    if not families:
        raise ConfigError("at least one graph family must be allowed")
    for fam in families:
        if fam not in PARAM_DOMAINS:
            raise ConfigError(f"unknown graph family {fam!r}")
    family = families[rng.integers(len(families))]
    params = {}
    for name, domain in PARAM_DOMAINS[family].items():
        params[name] = domain[rng.integers(len(domain))]
    return GraphFamilyConfig(family, params)


def _orient(skeleton: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    f = skeleton.shape[0]
    rank = np.empty(f, dtype=np.int64)
    rank[rng.permutation(f)] = np.arange(f)
    forward = rank[:, None] < rank[None, :]
    return (skeleton.astype(bool) & forward).astype(np.uint8)


def _symmetric_bernoulli(prob: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    f = prob.shape[0]
    upper = np.triu(rng.random((f, f)) < prob, k=1)
    return upper | upper.T


def _erdos_renyi(f, rng, edges_per_node):
    p = min(1.0, 2.0 * edges_per_node / (f - 1))
    return _orient(_symmetric_bernoulli(np.full((f, f), p), rng), rng)


def _scale_free(f, rng, edges_per_node, alpha, in_degree):
    # New nodes attach to existing ones with probability proportional to (deg+1)^alpha.
    adj = np.zeros((f, f), dtype=np.uint8)
    degree = np.zeros(f)
    for new in range(1, f):
        m = min(edges_per_node, new)
        weights = (degree[:new] + 1.0) ** alpha
        targets = rng.choice(new, size=m, replace=False, p=weights / weights.sum())
        for old in targets:
            if in_degree:
                adj[new, old] = 1  # hubs accumulate incoming edges
            else:
                adj[old, new] = 1  # hubs accumulate outgoing edges
            degree[old] += 1
            degree[new] += 1
    perm = rng.permutation(f)
    return adj[np.ix_(perm, perm)]


def _watts_strogatz(f, rng, lattice_k, rewire_prob):
    skeleton = np.zeros((f, f), dtype=bool)
    edges = []
    for u in range(f):
        for j in range(1, lattice_k + 1):
            v = (u + j) % f
            if v != u and not skeleton[u, v]:
                skeleton[u, v] = skeleton[v, u] = True
                edges.append((u, v))
    for u, v in edges:
        if rng.random() >= rewire_prob:
            continue
        free = np.flatnonzero(~skeleton[u])
        free = free[free != u]
        if free.size == 0:
            continue
        w = int(free[rng.integers(free.size)])
        skeleton[u, v] = skeleton[v, u] = False
        skeleton[u, w] = skeleton[w, u] = True
    return _orient(skeleton, rng)


def _stochastic_block(f, rng, edges_per_node, blocks, damping):
    z = rng.integers(blocks, size=f)
    same = z[:, None] == z[None, :]
    pairs = f * (f - 1) / 2
    intra = (same.sum() - f) / 2
    inter = pairs - intra
    p_in = min(1.0, edges_per_node * f / (intra + damping * inter))
    prob = np.where(same, p_in, damping * p_in)
    return _orient(_symmetric_bernoulli(prob, rng), rng)


def _geometric_random(f, rng, radius):
    pos = rng.random((f, 2))
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    skeleton = dist < radius
    np.fill_diagonal(skeleton, False)
    return _orient(skeleton, rng)


def sample_dag(config: GraphFamilyConfig, f: int, rng: np.random.Generator) -> Dag:
    if f < 2:
        raise ContractError(f"f must be >= 2, got {f}")
    config.validate()
    p = config.params
    fam = config.family
    if fam == ER:
        adj = _erdos_renyi(f, rng, p["edges_per_node"])
    elif fam in (SF_IN, SF_OUT):
        adj = _scale_free(f, rng, p["edges_per_node"], p["alpha"], in_degree=fam == SF_IN)
    elif fam == WS:
        adj = _watts_strogatz(f, rng, p["lattice_k"], p["rewire_prob"])
    elif fam == SBM:
        adj = _stochastic_block(f, rng, p["edges_per_node"], p["blocks"], p["damping"])
    else:
        adj = _geometric_random(f, rng, p["radius"])
    return Dag(adj)
