"""Batch sampling, the optimisation loop and checkpointing.

Every batch is generated from a seed derived from ``(run seed, batch index)``,
so training is reproducible step by step and a resumed run sees exactly the
data an uninterrupted run would.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import TRAIN_NAMESPACE, RunConfig, TrainConfig, derive_seed, from_dict, save_run_config
from .datagen.graphs import Dag
from .datagen.scm import DataGenConfig, Dataset, generate_dataset
from .errors import ConfigError, FormatError
from .model import CausalProbe
from .objective import (
    DualState, augmented_lagrangian, bce_edge_loss, dual_update, edge_pos_weight, spectral_radius,
)
from .blocks import no_decay
from .tensorio import load_tensors, save_tensors

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
DTYPES = {"float32": torch.float32, "float64": torch.float64}


class NonFiniteLossError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class StepStats:
    step: int
    bce: float
    h: float
    total: float
    lam: float
    rho: float
    lr: float
    grad_norm: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Cosine annealing from ``lr`` at step 0 to ``lr_floor`` at step ``steps - 1``."""
    if cfg.steps <= 1:
        return cfg.lr
    progress = step / (cfg.steps - 1)
    return cfg.lr_floor + 0.5 * (cfg.lr - cfg.lr_floor) * (1.0 + math.cos(math.pi * progress))


def batch_seed(seed: int, index: int) -> int:
    return derive_seed(TRAIN_NAMESPACE, seed, index)


def sample_batch(cfg: TrainConfig, gen: DataGenConfig, rng: np.random.Generator) -> list[tuple[Dataset, Dag]]:
    """One f per batch with P(f) proportional to f; per-dataset sampling scheme."""
    sizes = np.arange(cfg.f_min, cfg.f_max + 1)
    f = int(rng.choice(sizes, p=sizes / sizes.sum()))
    batch = []
    for _ in range(cfg.batch_size):
        mixed = rng.random() < cfg.scheme_probs[0]
        n_obs, n_int = (cfg.mixed_obs, cfg.mixed_int) if mixed else (cfg.obs_only, 0)
        seed = int(rng.integers(0, 2**64, dtype=np.uint64))
        ds, dag, _ = generate_dataset(seed, f, n_obs, n_int, gen)
        batch.append((ds, dag))
    return batch


def batch_for_step(config: RunConfig, step: int) -> list[tuple[Dataset, Dag]]:
    index = step if config.train.corpus_size is None else step % config.train.corpus_size
    rng = np.random.default_rng(batch_seed(config.seed, index))
    return sample_batch(config.train, config.datagen, rng)


def collate(batch, dtype=torch.float32):
    """Group datasets by row count and stack them into (B, n, f) / (B, f, f) tensors."""
    groups: dict[int, list] = {}
    for ds, dag in batch:
        groups.setdefault(ds.n, []).append((ds, dag))
    out = []
    for _, items in sorted(groups.items()):
        values = torch.as_tensor(np.stack([d.values for d, _ in items]), dtype=dtype)
        mask = torch.as_tensor(np.stack([d.intervention_mask for d, _ in items]), dtype=dtype)
        adj = torch.as_tensor(np.stack([g.adj for _, g in items]), dtype=dtype)
        out.append((values, mask, adj))
    return out


def build_model(config: RunConfig) -> CausalProbe:
    model = CausalProbe.from_configs(config.encoder, config.decoder, config.train.layer, seed=config.seed)
    return model.to(DTYPES[config.train.dtype])


def make_optimizer(model: CausalProbe, cfg: TrainConfig) -> torch.optim.AdamW:
    decay, keep = [], []
    for name, p in model.learnable_parameters():
        (keep if no_decay(name, model) else decay).append(p)
    return torch.optim.AdamW(
        [{"params": decay, "weight_decay": cfg.weight_decay}, {"params": keep, "weight_decay": 0.0}],
        lr=cfg.lr,
    )


def compute_objective(model, groups, dual: DualState, balance_edges: bool = True, power_iters: int = 20):
    """Batch-mean BCE and spectral radius combined by the augmented Lagrangian."""
    total_n = sum(v.shape[0] for v, _, _ in groups)
    bce = 0.0
    h = 0.0
    for values, mask, adj in groups:
        probs = model(values, mask)
        pw = edge_pos_weight(adj) if balance_edges else 1.0
        bce = bce + bce_edge_loss(probs, adj, pw) * (values.shape[0] / total_n)
        h = h + spectral_radius(probs, power_iters).sum() / total_n
    return bce, h, augmented_lagrangian(bce, h, dual)


def train_step(model, optimizer, batch, dual: DualState, lr: float, config: RunConfig, step: int = 0) -> StepStats:
    cfg = config.train
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.zero_grad(set_to_none=True)
    groups = collate(batch, DTYPES[cfg.dtype])
    bce, h, total = compute_objective(model, groups, dual, config.objective.balance_edges,
                                      config.objective.power_iters)
    if not torch.isfinite(total):
        diagnostics = {
            "step": step, "bce": float(bce), "h": float(h), "lam": dual.lam, "rho": dual.rho, "lr": lr,
            "datasets": [ds.meta() | {"f": ds.f} for ds, _ in batch],
        }
        raise NonFiniteLossError(f"non-finite loss at step {step}", diagnostics)
    total.backward()
    params = [p for _, p in model.learnable_parameters()]
    grad_norm = torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
    optimizer.step()
    return StepStats(step, float(bce.detach()), float(h.detach()), float(total.detach()), dual.lam, dual.rho, lr,
                     float(grad_norm))


class Trainer:
    """Owns model, optimizer, dual state and the step counter for one run."""

    def __init__(self, config: RunConfig, run_dir: Optional[Path] = None):
        self.config = config
        self.run_dir = Path(run_dir) if run_dir is not None else None
        torch.manual_seed(config.seed)
        self.model = build_model(config)
        self.optimizer = make_optimizer(self.model, config.train)
        o = config.objective
        self.dual = DualState(lam=o.lam0, rho=o.rho0, period=o.dual_period, growth=o.growth,
                              tolerance=o.tolerance, rho_max=o.rho_max)
        self.step = 0
        self.history: list[StepStats] = []
        self.dual_history: list[DualState] = [self.dual]

    @property
    def finished(self) -> bool:
        return self.step >= self.config.train.steps

    def run(self, until: Optional[int] = None) -> list[StepStats]:
        cfg = self.config.train
        stop = cfg.steps if until is None else min(until, cfg.steps)
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            save_run_config(self.config, self.run_dir / "config.json")
        while self.step < stop:
            s = self.step
            batch = batch_for_step(self.config, s)
            try:
                stats = train_step(self.model, self.optimizer, batch, self.dual, lr_at(s, cfg), self.config, s)
            except NonFiniteLossError as exc:
                self._dump(exc.diagnostics)
                raise
            self.history.append(stats)
            self.step = s + 1
            if self.step % self.dual.period == 0:
                self.dual = dual_update(self.dual, stats.h)
                self.dual_history.append(self.dual)
            if self.run_dir is not None:
                if s % cfg.log_every == 0 or self.step == cfg.steps:
                    self._log(stats)
                if self.step % cfg.checkpoint_every == 0 or self.step == cfg.steps:
                    self.save_checkpoint(self.checkpoint_path(self.step))
        return self.history

    def checkpoint_path(self, step: int) -> Path:
        return self.run_dir / "checkpoints" / f"step_{step}.tnsr"

    def _log(self, stats: StepStats) -> None:
        with open(self.run_dir / "metrics.jsonl", "a") as fh:
            fh.write(json.dumps(stats.as_dict()) + "\n")
        log.info("step %d bce %.4f h %.4f lr %.2e", stats.step, stats.bce, stats.h, stats.lr)

    def _dump(self, diagnostics: dict) -> None:
        if self.run_dir is not None:
            path = self.run_dir / f"diagnostic_step_{diagnostics['step']}.json"
            path.write_text(json.dumps(diagnostics, indent=2))

    # -- checkpointing -------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        tensors = {f"model/{k}": v for k, v in self.model.learnable_state().items()}
        params = dict(self.model.learnable_parameters())
        for name, p in params.items():
            state = self.optimizer.state.get(p)
            if state:
                for key, value in state.items():
                    tensors[f"optim/{name}/{key}"] = torch.as_tensor(value)
        meta = {
            "kind": "checkpoint",
            "format": CHECKPOINT_FORMAT,
            "step": self.step,
            "dual": _dual_to_json(self.dual),
            "dual_history": [_dual_to_json(d) for d in self.dual_history],
            "encoder_hash": self.model.encoder_hash(),
            "config": self.config.to_dict(),
        }
        save_tensors(path, tensors, meta)

    @classmethod
    def from_checkpoint(cls, path, run_dir: Optional[Path] = None) -> "Trainer":
        tensors, meta = load_tensors(path)
        if meta.get("kind") != "checkpoint":
            raise FormatError(f"{path} is not a checkpoint (kind={meta.get('kind')!r})", 0)
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise FormatError(f"checkpoint format {meta.get('format')} != supported {CHECKPOINT_FORMAT}", 0)
        trainer = cls(from_dict(meta["config"]), run_dir)
        trainer.load_state(tensors, meta)
        return trainer

    def load_state(self, tensors: dict, meta: dict) -> None:
        if meta["encoder_hash"] != self.model.encoder_hash():
            raise ConfigError("checkpoint was trained against different encoder weights")
        own = self.model.learnable_state()
        model_keys = {k[len("model/"):] for k in tensors if k.startswith("model/")}
        if model_keys != set(own):
            raise ConfigError(f"checkpoint tensors do not match the model: "
                              f"missing {sorted(set(own) - model_keys)}, unexpected {sorted(model_keys - set(own))}")
        for k, ref in own.items():
            if tuple(tensors[f"model/{k}"].shape) != tuple(ref.shape):
                raise ConfigError(f"checkpoint tensor {k}: expected {tuple(ref.shape)}, "
                                  f"found {tuple(tensors[f'model/{k}'].shape)}")
        new_state = {k: torch.as_tensor(tensors[f"model/{k}"]) for k in own}
        self.model.load_state_dict(new_state, strict=False)
        params = dict(self.model.learnable_parameters())
        self.optimizer.state.clear()
        for key, value in tensors.items():
            if not key.startswith("optim/"):
                continue
            name, slot = key[len("optim/"):].rsplit("/", 1)
            self.optimizer.state[params[name]][slot] = torch.as_tensor(value)
        self.dual = _dual_from_json(meta["dual"])
        self.dual_history = [_dual_from_json(d) for d in meta["dual_history"]]
        self.step = int(meta["step"])


def _dual_to_json(dual: DualState) -> dict:
    # Strict JSON has no infinity; the "no previous h" sentinel is stored as null.
    d = dataclasses.asdict(dual)
    if math.isinf(d["h_last"]):
        d["h_last"] = None
    return d


def _dual_from_json(d: dict) -> DualState:
    d = dict(d)
    if d.get("h_last") is None:
        d["h_last"] = math.inf
    return DualState(**d)


def latest_checkpoint(run_dir) -> Optional[Path]:
    ckpts = list((Path(run_dir) / "checkpoints").glob("step_*.tnsr"))
    if not ckpts:
        return None
    return max(ckpts, key=lambda p: int(p.stem.split("_")[1]))


def truncate_metrics(run_dir, step: int) -> None:
    """Drop metric records at or after ``step`` (they are about to be recomputed)."""
    path = Path(run_dir) / "metrics.jsonl"
    if not path.exists():
        return
    kept = [line for line in path.read_text().splitlines() if line and json.loads(line)["step"] < step]
    path.write_text("".join(line + "\n" for line in kept))
