"""Structural causal models with linear or random-Fourier-feature mechanisms.

Each node is generated as ``x_j = f_j(x_pa) + h_j(x_pa) * eps_j``. Gaussian
noise uses a constant scale; Laplace and Cauchy noise use a heteroscedastic
scale ``h(x) = softplus(g(x))`` where ``g`` is itself a random RFF function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from ..errors import ConfigError, ContractError
from .graphs import FAMILIES, Dag, sample_dag, sample_graph_config

LINEAR = "linear"
RFF = "rff"
MECHANISMS = (LINEAR, RFF)

GAUSSIAN = "gaussian"
LAPLACE = "laplace"
CAUCHY = "cauchy"
NOISES = (GAUSSIAN, LAPLACE, CAUCHY)

N_RFF = 100
WEIGHT_RANGE = (0.25, 4.0)
BIAS_RANGE = (-3.0, 3.0)
LENGTH_SCALE_RANGE = (5.0, 12.0)
OUTPUT_SCALE_RANGE = (8.0, 22.0)
SIGMA_RANGE = (0.2, 2.0)
INTERVENTION_RANGE = (1.0, 5.0)
# Scale-function RFF for heteroscedastic noise; output scale kept small so h stays O(1).
NOISE_LENGTH_SCALE_RANGE = (5.0, 12.0)
NOISE_OUTPUT_SCALE_RANGE = (0.5, 2.0)
STANDARDIZE_CLAMP = 10.0
MIN_STD = 1e-6


def uniform_pm(rng: np.random.Generator, low: float, high: float, size=None):
    """Equal mixture of Unif(low, high) and Unif(-high, -low)."""
    mag = rng.uniform(low, high, size=size)
    sign = np.where(rng.random(size=size) < 0.5, -1.0, 1.0)
    return mag * sign


@dataclass(frozen=True, eq=False)
class LinearMechanism:
    weights: np.ndarray
    bias: float

    @property
    def arity(self) -> int:
        return self.weights.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights + self.bias


@dataclass(frozen=True, eq=False)
class RffMechanism:
    """``c * sqrt(2/M) * sum_m beta_m cos(omega_m . x / ell + phi_m) + b``."""

    omega: np.ndarray  # (M, arity)
    phases: np.ndarray  # (M,)
    amplitudes: np.ndarray  # (M,)
    length_scale: float
    output_scale: float
    bias: float

    @property
    def arity(self) -> int:
        return self.omega.shape[1]

    @property
    def n_features(self) -> int:
        return self.omega.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.arity == 0:
            return np.full(x.shape[:-1], self.bias, dtype=float)
        phi = np.cos(x @ self.omega.T / self.length_scale + self.phases)
        scale = self.output_scale * math.sqrt(2.0 / self.n_features)
        return scale * (phi @ self.amplitudes) + self.bias


Mechanism = Union[LinearMechanism, RffMechanism]


def eval_mechanism(mech: Mechanism, parent_values) -> np.ndarray:
    """Deterministic part of a node's structural equation.

    ``parent_values`` is a vector of length ``arity`` or a matrix of shape
    ``(n, arity)``; the result is a scalar or a length-``n`` vector.
    """
    x = np.asarray(parent_values, dtype=float)
    if x.ndim == 0 or x.shape[-1] != mech.arity:
        raise ContractError(f"mechanism expects {mech.arity} parent values, got shape {x.shape}")
    return mech(x)


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    family: str
    sigma: Optional[float] = None
    scale_fn: Optional[RffMechanism] = None

    def scale(self, x_pa: np.ndarray) -> np.ndarray:
        if self.family == GAUSSIAN:
            return np.full(x_pa.shape[:-1], self.sigma)
        return np.logaddexp(0.0, self.scale_fn(x_pa))

    def standard(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.family == GAUSSIAN:
            return rng.standard_normal(n)
        if self.family == LAPLACE:
            return rng.laplace(0.0, 1.0, size=n)
        return rng.standard_cauchy(n)


@dataclass(frozen=True, eq=False)
class Scm:
    dag: Dag
    kind: str
    mechanisms: tuple
    noises: tuple
    topo_order: tuple

    @property
    def noise_family(self) -> str:
        return self.noises[0].family


def _sample_rff(rng, arity, length_range, scale_range, bias_range) -> RffMechanism:
    return RffMechanism(
        omega=rng.standard_normal((N_RFF, arity)),
        phases=rng.uniform(0.0, 2 * np.pi, size=N_RFF),
        amplitudes=rng.standard_normal(N_RFF),
        length_scale=float(rng.uniform(*length_range)),
        output_scale=float(rng.uniform(*scale_range)),
        bias=float(rng.uniform(*bias_range)) if bias_range else 0.0,
    )


def sample_scm(
    dag: Dag,
    rng: np.random.Generator,
    mechanisms: Sequence[str] = MECHANISMS,
    noises: Sequence[str] = NOISES,
) -> Scm:
    """Draw one mechanism kind and one noise family for the whole SCM."""
    mechanisms, noises = tuple(mechanisms), tuple(noises)
    if not mechanisms or any(m not in MECHANISMS for m in mechanisms):
        raise ConfigError(f"mechanisms must be a non-empty subset of {MECHANISMS}, got {mechanisms}")
    if not noises or any(n not in NOISES for n in noises):
        raise ConfigError(f"noises must be a non-empty subset of {NOISES}, got {noises}")
    kind = mechanisms[rng.integers(len(mechanisms))]
    noise_family = noises[rng.integers(len(noises))]

    mechs, noise_specs = [], []
    for j in range(dag.f):
        arity = dag.parents(j).size
        if kind == LINEAR:
            mechs.append(
                LinearMechanism(
                    weights=uniform_pm(rng, *WEIGHT_RANGE, size=arity),
                    bias=float(rng.uniform(*BIAS_RANGE)),
                )
            )
        else:
            mechs.append(_sample_rff(rng, arity, LENGTH_SCALE_RANGE, OUTPUT_SCALE_RANGE, BIAS_RANGE))
        if noise_family == GAUSSIAN:
            noise_specs.append(NoiseSpec(GAUSSIAN, sigma=float(rng.uniform(*SIGMA_RANGE))))
        else:
            g = _sample_rff(rng, arity, NOISE_LENGTH_SCALE_RANGE, NOISE_OUTPUT_SCALE_RANGE, None)
            noise_specs.append(NoiseSpec(noise_family, scale_fn=g))
    return Scm(dag, kind, tuple(mechs), tuple(noise_specs), tuple(dag.topological_order()))


class Dataset:
    """Value matrix plus single-variable intervention mask.

    Rows ``[0, n_obs)`` are observational; rows ``[n_obs, n_obs + n_int)`` each
    intervene on exactly one node.
    """

    def __init__(self, values, intervention_mask, *, seed=0, family="", mechanism="", noise="",
                 n_obs=0, n_int=0):
        values = np.ascontiguousarray(values, dtype=np.float64)
        mask = np.ascontiguousarray(intervention_mask, dtype=np.uint8)
        if values.ndim != 2 or values.shape != mask.shape:
            raise ContractError(f"values {values.shape} and mask {mask.shape} must be equal 2-D shapes")
        if values.shape[0] != n_obs + n_int:
            raise ContractError(f"row count {values.shape[0]} != n_obs + n_int = {n_obs + n_int}")
        if mask.sum(axis=1).max(initial=0) > 1:
            raise ContractError("each mask row may mark at most one intervened cell")
        if mask[:n_obs].any():
            raise ContractError("observational rows must have an all-zero mask")
        self.values = values
        self.intervention_mask = mask
        self.seed = int(seed)
        self.family = family
        self.mechanism = mechanism
        self.noise = noise
        self.n_obs = int(n_obs)
        self.n_int = int(n_int)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def f(self) -> int:
        return self.values.shape[1]

    def meta(self) -> dict:
        return {"seed": self.seed, "family": self.family, "mechanism": self.mechanism,
                "noise": self.noise, "n_obs": self.n_obs, "n_int": self.n_int}

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.meta() == other.meta()
            and self.values.tobytes() == other.values.tobytes()
            and np.array_equal(self.intervention_mask, other.intervention_mask)
        )

    def __repr__(self):
        return f"Dataset(n={self.n}, f={self.f}, family={self.family!r}, mechanism={self.mechanism!r})"


def standardize(values: np.ndarray, n_obs: int) -> np.ndarray:
    """Z-score by observational-row statistics, then clamp to +-10."""
    ref = values[:n_obs] if n_obs >= 2 else values
    mean = ref.mean(axis=0)
    std = np.maximum(ref.std(axis=0), MIN_STD)
    return np.clip((values - mean) / std, -STANDARDIZE_CLAMP, STANDARDIZE_CLAMP)


def ancestral_sample(
    scm: Scm,
    n_obs: int,
    n_int: int,
    rng: np.random.Generator,
    *,
    standardize_values: bool = True,
    seed: int = 0,
    family: str = "",
) -> Dataset:
    if n_obs < 0 or n_int < 0 or n_obs + n_int < 1:
        raise ContractError(f"need n_obs, n_int >= 0 with at least one row, got {n_obs}, {n_int}")
    f = scm.dag.f
    n = n_obs + n_int
    targets = np.full(n, -1)
    if n_int > 0:
        subset = rng.choice(f, size=math.ceil(f / 2), replace=False)
        # Balanced, shuffled assignment: each row's target is marginally uniform over the
        # subset and every subset node is hit once n_int >= len(subset).
        assigned = np.resize(rng.permutation(subset), n_int)
        targets[n_obs:] = rng.permutation(assigned)

    x = np.zeros((n, f))
    mask = np.zeros((n, f), dtype=np.uint8)
    for j in scm.topo_order:
        pa = scm.dag.parents(j)
        x_pa = x[:, pa]
        noise = scm.noises[j]
        x[:, j] = scm.mechanisms[j](x_pa) + noise.scale(x_pa) * noise.standard(rng, n)
        hit = targets == j
        if hit.any():
            x[hit, j] = uniform_pm(rng, *INTERVENTION_RANGE, size=int(hit.sum()))
            mask[hit, j] = 1
    if standardize_values:
        x = standardize(x, n_obs)
    return Dataset(x, mask, seed=seed, family=family, mechanism=scm.kind, noise=scm.noise_family,
                   n_obs=n_obs, n_int=n_int)


@dataclass(frozen=True)
class DataGenConfig:
    """Which graph families, mechanisms and noises the generator may draw."""

    families: tuple = FAMILIES
    mechanisms: tuple = MECHANISMS
    noises: tuple = NOISES

    def validate(self) -> None:
        for name, allowed in (("families", FAMILIES), ("mechanisms", MECHANISMS), ("noises", NOISES)):
            chosen = tuple(getattr(self, name))
            if not chosen or any(c not in allowed for c in chosen):
                raise ConfigError(f"datagen.{name} must be a non-empty subset of {allowed}, got {chosen}")


def generate_dataset(seed: int, f: int, n_obs: int, n_int: int, gen: DataGenConfig = DataGenConfig()):
    """Fully deterministic (Dataset, Dag, Scm) triple from a 64-bit seed."""
    rng = np.random.default_rng(seed)
    config = sample_graph_config(rng, gen.families)
    dag = sample_dag(config, f, rng)
    scm = sample_scm(dag, rng, gen.mechanisms, gen.noises)
    ds = ancestral_sample(scm, n_obs, n_int, rng, seed=seed, family=config.family)
    return ds, dag, scm
