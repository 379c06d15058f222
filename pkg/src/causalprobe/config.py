"""Run configuration: defaults, presets, file and flag merging, validation.

Precedence is preset defaults < config file < command-line overrides. The
resolved ``RunConfig`` is total (every field has a value) and is written
verbatim into each run directory.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .datagen.scm import DataGenConfig
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .errors import ConfigError

# Seed namespaces keep training and evaluation data streams disjoint.
TRAIN_NAMESPACE = 0x7472
EVAL_NAMESPACE = 0x6576


@dataclass(frozen=True)
class ObjectiveConfig:
    lam0: float = 0.0
    rho0: float = 0.1
    growth: float = 2.0
    tolerance: float = 0.9
    dual_period: int = 500
    rho_max: float = 1e4
    balance_edges: bool = True
    power_iters: int = 20

    def validate(self) -> None:
        if self.power_iters < 1:
            raise ConfigError(f"objective.power_iters must be >= 1, got {self.power_iters}")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 5e-4
    lr_floor: float = 1e-6
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    f_min: int = 4
    f_max: int = 20
    scheme_probs: tuple = (0.75, 0.25)  # (obs + int, obs only)
    mixed_obs: int = 100
    mixed_int: int = 100
    obs_only: int = 200
    layer: int = 2
    log_every: int = 50
    checkpoint_every: int = 500
    corpus_size: Optional[int] = None  # fixed-corpus mode: batch index modulo corpus_size
    dtype: str = "float32"

    def validate(self, max_features: int = 20) -> None:
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("train.steps and train.batch_size must be >= 1")
        if not 2 <= self.f_min <= self.f_max <= max_features:
            raise ConfigError(
                f"train.f_min/train.f_max = {self.f_min}/{self.f_max} must satisfy 2 <= f_min <= f_max <= {max_features}"
            )
        probs = tuple(self.scheme_probs)
        if len(probs) != 2 or min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12:
            raise ConfigError(f"train.scheme_probs must be two nonnegative values summing to 1, got {probs}")
        if self.mixed_obs < 0 or self.mixed_int < 0 or self.mixed_obs + self.mixed_int < 1 or self.obs_only < 1:
            raise ConfigError("train sample counts must be nonnegative with at least one row per scheme")
        if not 0 < self.lr_floor <= self.lr:
            raise ConfigError(f"train.lr_floor must lie in (0, train.lr], got {self.lr_floor}")
        if self.layer < 0:
            raise ConfigError(f"train.layer must be >= 0, got {self.layer}")
        if self.log_every < 1 or self.checkpoint_every < 1:
            raise ConfigError("train.log_every and train.checkpoint_every must be >= 1")
        if self.corpus_size is not None and self.corpus_size < 1:
            raise ConfigError("train.corpus_size must be >= 1 when set")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"train.dtype must be 'float32' or 'float64', got {self.dtype!r}")


@dataclass(frozen=True)
class EvalConfig:
    sizes: tuple = (5, 7, 10, 15, 20)
    datasets_per_size: int = 100
    n_obs: int = 300
    n_int: int = 300
    seed: int = 0
    datagen: DataGenConfig = field(default_factory=DataGenConfig)
    batch_size: int = 16

    def validate(self, max_features: int = 20) -> None:
        if not self.sizes or any(not 2 <= f <= max_features for f in self.sizes):
            raise ConfigError(f"eval.sizes must lie in [2, {max_features}], got {self.sizes}")
        if self.datasets_per_size < 1:
            raise ConfigError("eval.datasets_per_size must be >= 1")
        if self.n_obs < 0 or self.n_int < 0 or self.n_obs + self.n_int < 1:
            raise ConfigError("eval sample counts must be nonnegative with at least one row")
        self.datagen.validate()


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    datagen: DataGenConfig = field(default_factory=DataGenConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "RunConfig":
        self.datagen.validate()
        self.encoder.validate()
        self.decoder.validate()
        self.objective.validate()
        self.train.validate(self.decoder.max_features)
        self.eval.validate(self.decoder.max_features)
        if self.train.layer > self.encoder.n_layers:
            raise ConfigError(f"train.layer={self.train.layer} exceeds encoder.n_layers={self.encoder.n_layers}")
        if self.encoder.d % self.decoder.n_heads:
            raise ConfigError(f"encoder.d={self.encoder.d} must be divisible by decoder.n_heads={self.decoder.n_heads}")
        return self

    def to_dict(self) -> dict:
        return _to_plain(dataclasses.asdict(self))

    def provenance_hash(self) -> str:
        """Hash of everything that determines results (the output directory excluded)."""
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        """``replace(**{"train.layer": 3})``-style nested override."""
        return from_dict(deep_merge(self.to_dict(), unflatten(changes)))


def _to_plain(obj):
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(sorted(f'{path}{u}' for u in unknown))}")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, f"{path}{name}.")
        elif hint is tuple or typing.get_origin(hint) is tuple:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path}{name} must be a list, got {value!r}")
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = _check_scalar(hint, value, f"{path}{name}")
    return cls(**kwargs)


def _check_scalar(hint, value, name):
    optional = typing.get_origin(hint) is typing.Union and type(None) in typing.get_args(hint)
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{name} may not be null")
    base = next(a for a in typing.get_args(hint) if a is not type(None)) if optional else hint
    if base is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if base is int and isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return int(value)
    if base in (str, bool) and isinstance(value, base):
        return value
    raise ConfigError(f"{name} expects {base.__name__}, got {value!r}")


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "").validate()


def deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def unflatten(flat: dict) -> dict:
    out: dict = {}
    for key, value in flat.items():
        node = out
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return out


PRESETS: dict[str, dict[str, Any]] = {
    "desk": {},
    "paper": {
        "encoder": {"d": 192, "n_layers": 12, "n_heads": 6, "ff_hidden": 768},
        "decoder": {"n_tokens": 30, "n_heads": 6, "ff_hidden": 768},
        "train": {"steps": 100_000, "batch_size": 32, "layer": 4, "log_every": 100, "checkpoint_every": 5000},
    },
}


def resolve(preset: str = "desk", file: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    data = deep_merge(RunConfig().to_dict(), PRESETS[preset])
    if file is not None:
        try:
            loaded = json.loads(Path(file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {file}: {exc}") from None
        data = deep_merge(data, loaded)
    if overrides:
        data = deep_merge(data, unflatten(overrides))
    return from_dict(data)


def load_run_config(path) -> RunConfig:
    return from_dict(json.loads(Path(path).read_text()))


def save_run_config(config: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


def derive_seed(*words: int) -> int:
    """Deterministic 64-bit seed from a tuple of nonnegative integers."""
    return int(np.random.SeedSequence(list(words)).generate_state(1, np.uint64)[0])
