"""Ablation harnesses: encoder layer choice, encoder weights, decoder variant.

Every run in a sweep starts from the same base configuration and seed, so all
runs see the same training batches and the same held-out suite; only the
swept setting changes. The decoder depth is pinned to the base value for the
whole sweep so that changing the layer choice does not also change the
decoder's size.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from ..config import RunConfig
from ..decoder import EVOLVING, NO_DECODER, STANDARD
from ..encoder import BYPASS, FILE, RANDOM
from ..training import Trainer
from .protocol import EvalReport, dataset_hash, eval_datasets, evaluate

log = logging.getLogger(__name__)

KINDS = ("layers", "encoder", "decoder")
DECODER_VARIANTS = (NO_DECODER, STANDARD, EVOLVING)


@dataclass
class RunResult:
    name: str
    config: RunConfig
    trainer: Trainer
    report: EvalReport

    def row(self, base: RunConfig) -> dict:
        o = self.report.overall
        return {
            "name": self.name,
            "config_hash": self.config.provenance_hash(),
            "config_diff": config_diff(base, self.config),
            "roc_auc": o["roc_auc"]["mean"],
            "roc_auc_stderr": o["roc_auc"]["stderr"],
            "ap": o["ap"]["mean"],
            "ap_stderr": o["ap"]["stderr"],
            "n_scored": o["ap"]["n"],
            "n_excluded": len(self.report.exclusions),
            "eval_set_hash": self.report.eval_set_hash,
            "train_data_hash": train_data_hash(self.config),
            "final_h": self.trainer.history[-1].h if self.trainer.history else None,
        }


@dataclass
class AblationResult:
    kind: str
    base: RunConfig
    runs: dict[str, RunResult] = field(default_factory=dict)
    skipped: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        rows = [r.row(self.base) for r in self.runs.values()]
        return {
            "kind": self.kind,
            "base_config_hash": self.base.provenance_hash(),
            "rows": rows,
            "skipped": self.skipped,
            "flags": self.flags,
            "shared_eval_set": len({r["eval_set_hash"] for r in rows}) <= 1,
            "shared_train_data": len({r["train_data_hash"] for r in rows}) <= 1,
            "plot_data": {"x": [r["name"] for r in rows], "ap": [r["ap"] for r in rows],
                          "roc_auc": [r["roc_auc"] for r in rows]},
        }

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / f"ablation_{self.kind}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path


def config_diff(a: RunConfig, b: RunConfig) -> list[str]:
    """Dotted names of the fields that differ (output directory ignored)."""
    def flat(d, prefix=""):
        out = {}
        for k, v in d.items():
            if isinstance(v, dict):
                out.update(flat(v, f"{prefix}{k}."))
            else:
                out[f"{prefix}{k}"] = v
        return out

    fa, fb = flat(a.to_dict()), flat(b.to_dict())
    return sorted(k for k in fa.keys() | fb.keys() if k != "out_dir" and fa.get(k) != fb.get(k))


def train_data_hash(config: RunConfig) -> str:
    """Hash of every setting that determines the training batches."""
    t = config.train
    key = {
        "seed": config.seed, "datagen": config.to_dict()["datagen"], "steps": t.steps,
        "batch_size": t.batch_size, "f": [t.f_min, t.f_max], "scheme": list(t.scheme_probs),
        "rows": [t.mixed_obs, t.mixed_int, t.obs_only], "corpus_size": t.corpus_size,
    }
    return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]


def pin_decoder_depth(base: RunConfig) -> RunConfig:
    depth = base.decoder.resolved_layers(base.train.layer)
    return base.replace(**{"decoder.n_layers": depth})


def run_one(name: str, config: RunConfig, out_dir=None, items=None) -> RunResult:
    run_dir = Path(out_dir) / name if out_dir is not None else None
    log.info("ablation run %s (config %s)", name, config.provenance_hash())
    trainer = Trainer(config, run_dir)
    trainer.run()
    provenance = {"run": name, "config_hash": config.provenance_hash()}
    report = evaluate(trainer.model, config.eval, provenance, items)
    if run_dir is not None:
        report.write(run_dir / "eval")
    return RunResult(name, config, trainer, report)


def ablate_layers(base: RunConfig, layers: Sequence[int], out_dir=None) -> AblationResult:
    base = pin_decoder_depth(base)
    result = AblationResult("layers", base)
    items = eval_datasets(base.eval)
    for layer in layers:
        cfg = base.replace(**{"train.layer": int(layer)})
        result.runs[f"layer_{layer}"] = run_one(f"layer_{layer}", cfg, out_dir, items)
    return result


def ablate_encoder_variants(base: RunConfig, weight_path: Optional[str] = None,
                            worse_weight_path: Optional[str] = None, out_dir=None) -> AblationResult:
    """Loaded weights, random weights, embeddings only; worse weights if a file is given."""
    base = pin_decoder_depth(base)
    result = AblationResult("encoder", base)
    variants = [
        ("loaded", {"encoder.weight_source": FILE, "encoder.weight_path": weight_path}, weight_path, True),
        ("random", {"encoder.weight_source": RANDOM, "encoder.weight_path": None}, None, False),
        ("pre_encoder", {"encoder.weight_source": BYPASS, "encoder.weight_path": None}, None, False),
    ]
    if worse_weight_path is not None:
        variants.append(("worse", {"encoder.weight_source": FILE, "encoder.weight_path": worse_weight_path},
                         worse_weight_path, True))
    items = eval_datasets(base.eval)
    for name, changes, path, needs_file in variants:
        if needs_file and (path is None or not Path(path).is_file()):
            notice = f"variant {name!r} skipped: weight file {path!r} not found"
            log.warning(notice)
            result.skipped.append({"name": name, "reason": notice})
            continue
        result.runs[name] = run_one(name, base.replace(**changes), out_dir, items)
    return result


def ablate_decoder_variants(base: RunConfig, variants: Sequence[str] = DECODER_VARIANTS,
                            out_dir=None) -> AblationResult:
    """Train each decoder variant on identical data; flag if Standard scores below NoDecoder in AP."""
    base = pin_decoder_depth(base)
    result = AblationResult("decoder", base)
    items = eval_datasets(base.eval)
    for variant in variants:
        cfg = base.replace(**{"decoder.variant": variant})
        result.runs[variant] = run_one(variant, cfg, out_dir, items)
    if STANDARD in result.runs and NO_DECODER in result.runs:
        std_ap = result.runs[STANDARD].report.overall["ap"]["mean"]
        none_ap = result.runs[NO_DECODER].report.overall["ap"]["mean"]
        if std_ap is None or none_ap is None or std_ap < none_ap:
            result.flags.append(f"ordering_failed: standard AP {std_ap} < no-decoder AP {none_ap}")
    return result


def run_ablation(kind: str, base: RunConfig, *, layers: Sequence[int] = (0, 1, 2), weight_path=None,
                 worse_weight_path=None, out_dir=None) -> AblationResult:
    if kind == "layers":
        return ablate_layers(base, layers, out_dir)
    if kind == "encoder":
        return ablate_encoder_variants(base, weight_path, worse_weight_path, out_dir)
    if kind == "decoder":
        return ablate_decoder_variants(base, out_dir=out_dir)
    raise ValueError(f"unknown ablation kind {kind!r}; expected one of {KINDS}")
