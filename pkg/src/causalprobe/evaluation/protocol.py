"""Held-out evaluation: dataset generation, batched prediction, per-dataset
metrics and the aggregated report with its JSON/CSV/plot-data outputs."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from ..config import EVAL_NAMESPACE, EvalConfig, derive_seed
from ..datagen.graphs import Dag
from ..datagen.scm import Dataset, generate_dataset
from ..datagen.serialization import serialize_dataset
from ..errors import UndefinedMetricError
from .metrics import average_precision, off_diagonal, roc_auc

METRICS = ("roc_auc", "ap")
CSV_COLUMNS = ("seed", "f", "family", "mechanism", "noise", "n_edges", "roc_auc", "ap")

_STAT = {
    "type": "object",
    "required": ["mean", "stderr", "n"],
    "properties": {
        "mean": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "stderr": {"type": ["number", "null"], "minimum": 0},
        "n": {"type": "integer", "minimum": 0},
    },
}
_GROUP = {"type": "object", "required": list(METRICS), "properties": {m: _STAT for m in METRICS}}
_METRIC = {"type": ["number", "null"], "minimum": 0, "maximum": 1}

REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "EvalReport",
    "type": "object",
    "required": ["records", "exclusions", "aggregates", "eval_set_hash", "n_datasets"],
    "properties": {
        "n_datasets": {"type": "integer", "minimum": 0},
        "eval_set_hash": {"type": "string"},
        "provenance": {"type": "object"},
        "records": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["seed", "f", "family", "n_edges", "roc_auc", "ap"],
                "properties": {
                    "seed": {"type": "integer", "minimum": 0},
                    "f": {"type": "integer", "minimum": 2},
                    "family": {"type": "string"},
                    "n_edges": {"type": "integer", "minimum": 0},
                    "roc_auc": _METRIC,
                    "ap": _METRIC,
                },
            },
        },
        "exclusions": {
            "type": "array",
            "items": {"type": "object", "required": ["seed", "f", "reason"]},
        },
        "aggregates": {
            "type": "object",
            "required": ["overall", "by_f", "by_family", "by_family_f"],
            "properties": {
                "overall": _GROUP,
                "by_f": {"type": "object", "additionalProperties": _GROUP},
                "by_family": {"type": "object", "additionalProperties": _GROUP},
                "by_family_f": {"type": "object", "additionalProperties": _GROUP},
            },
        },
    },
}


def eval_seed(seed: int, f: int, index: int) -> int:
    return derive_seed(EVAL_NAMESPACE, seed, f, index)


def eval_datasets(cfg: EvalConfig) -> list[tuple[Dataset, Dag]]:
    """The held-out suite: ``datasets_per_size`` datasets for each feature size."""
    cfg.validate()
    out = []
    for f in cfg.sizes:
        for i in range(cfg.datasets_per_size):
            ds, dag, _ = generate_dataset(eval_seed(cfg.seed, f, i), f, cfg.n_obs, cfg.n_int, cfg.datagen)
            out.append((ds, dag))
    return out


def dataset_hash(items: Sequence[tuple[Dataset, Dag]]) -> str:
    h = hashlib.sha256()
    for ds, dag in items:
        h.update(serialize_dataset(ds, dag))
    return h.hexdigest()[:16]


@torch.no_grad()
def predict(model, items: Sequence[tuple[Dataset, Dag]], batch_size: int = 16) -> list[np.ndarray]:
    """Edge probabilities for every dataset, batching datasets of equal shape."""
    dtype = next(model.parameters()).dtype
    out: list[Optional[np.ndarray]] = [None] * len(items)
    groups: dict[tuple, list[int]] = {}
    for i, (ds, _) in enumerate(items):
        groups.setdefault(ds.values.shape, []).append(i)
    for idx in groups.values():
        for start in range(0, len(idx), batch_size):
            chunk = idx[start:start + batch_size]
            values = torch.as_tensor(np.stack([items[i][0].values for i in chunk]), dtype=dtype)
            mask = torch.as_tensor(np.stack([items[i][0].intervention_mask for i in chunk]), dtype=dtype)
            probs = model(values, mask).double().numpy()
            for i, p in zip(chunk, probs):
                out[i] = p
    return out


def _stat(values: list[float]) -> dict:
    n = len(values)
    if n == 0:
        return {"mean": None, "stderr": None, "n": 0}
    arr = np.asarray(values, dtype=np.float64)
    stderr = float(arr.std(ddof=1) / math.sqrt(n)) if n > 1 else None
    return {"mean": float(arr.mean()), "stderr": stderr, "n": n}


def summarize(records: Sequence[dict]) -> dict:
    return {m: _stat([r[m] for r in records if r[m] is not None]) for m in METRICS}


def aggregate_records(records: Sequence[dict]) -> dict:
    """Mean/stderr/n per metric overall, per f, per family and per (family, f)."""
    def grouped(key):
        buckets: dict[str, list] = {}
        for r in records:
            buckets.setdefault(key(r), []).append(r)
        return {k: summarize(v) for k, v in sorted(buckets.items())}

    return {
        "overall": summarize(records),
        "by_f": grouped(lambda r: str(r["f"])),
        "by_family": grouped(lambda r: r["family"]),
        "by_family_f": grouped(lambda r: f"{r['family']}/{r['f']}"),
    }


@dataclass
class EvalReport:
    records: list[dict]
    exclusions: list[dict]
    aggregates: dict
    eval_set_hash: str
    provenance: dict = field(default_factory=dict)

    @property
    def overall(self) -> dict:
        return self.aggregates["overall"]

    def to_dict(self) -> dict:
        return {
            "n_datasets": len(self.records),
            "eval_set_hash": self.eval_set_hash,
            "provenance": self.provenance,
            "records": self.records,
            "exclusions": self.exclusions,
            "aggregates": self.aggregates,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        """One row per scored dataset; excluded datasets are listed in the JSON only."""
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for r in self.records:
            if r["roc_auc"] is not None and r["ap"] is not None:
                writer.writerow(r)
        return buf.getvalue()

    def plot_data(self) -> dict:
        """Numeric series: metric vs feature size, and per-family bars."""
        by_f = self.aggregates["by_f"]
        sizes = sorted(by_f, key=int)
        series = {"f": [int(s) for s in sizes]}
        for m in METRICS:
            series[m] = [by_f[s][m]["mean"] for s in sizes]
            series[f"{m}_stderr"] = [by_f[s][m]["stderr"] for s in sizes]
        fams = self.aggregates["by_family"]
        family = {"family": list(fams)}
        for m in METRICS:
            family[m] = [fams[k][m]["mean"] for k in fams]
        return {"by_f": series, "by_family": family}

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"json": out / "report.json", "csv": out / "report.csv", "plot": out / "plot_data.json"}
        paths["json"].write_text(self.to_json() + "\n")
        paths["csv"].write_text(self.to_csv())
        paths["plot"].write_text(json.dumps(self.plot_data(), indent=2) + "\n")
        return paths


def build_report(items: Sequence[tuple[Dataset, Dag]], predictions: Sequence[np.ndarray],
                 provenance: Optional[dict] = None) -> EvalReport:
    """Score each prediction against its DAG over off-diagonal entries."""
    if len(items) != len(predictions):
        raise ValueError(f"{len(items)} datasets but {len(predictions)} predictions")
    records, exclusions = [], []
    for (ds, dag), probs in zip(items, predictions):
        scores, labels = off_diagonal(probs), off_diagonal(dag.adj)
        rec = {"seed": ds.seed, "f": ds.f, "family": ds.family, "mechanism": ds.mechanism,
               "noise": ds.noise, "n_edges": dag.n_edges, "roc_auc": None, "ap": None}
        reasons = []
        for name, fn in (("roc_auc", roc_auc), ("ap", average_precision)):
            try:
                rec[name] = fn(scores, labels)
            except UndefinedMetricError as exc:
                reasons.append(f"{name}: {exc}")
        if reasons:
            exclusions.append({"seed": ds.seed, "f": ds.f, "family": ds.family, "reason": "; ".join(reasons)})
        records.append(rec)
    return EvalReport(records, exclusions, aggregate_records(records), dataset_hash(items), provenance or {})


def evaluate(model, cfg: EvalConfig, provenance: Optional[dict] = None,
             items: Optional[Sequence[tuple[Dataset, Dag]]] = None) -> EvalReport:
    """Generate (or reuse) the held-out suite, predict, and score."""
    if items is None:
        items = eval_datasets(cfg)
    model.eval()
    return build_report(items, predict(model, items, cfg.batch_size), provenance)
