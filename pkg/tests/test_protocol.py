import csv
import io
import json

import jsonschema
import numpy as np
import pytest
import torch

from causalprobe.config import EvalConfig
from causalprobe.datagen import DataGenConfig, Dag
from causalprobe.evaluation import (
    REPORT_SCHEMA, aggregate_records, build_report, eval_datasets, evaluate,
)
from causalprobe.training import Trainer

from conftest import tiny_config

SMALL = EvalConfig(sizes=(4, 6), datasets_per_size=8, n_obs=20, n_int=20, seed=3)


def zero_head_model():
    model = Trainer(tiny_config()).model
    torch.nn.init.zeros_(model.head.parent.weight)
    torch.nn.init.zeros_(model.head.child.weight)
    return model


def test_suite_layout_and_determinism():
    items = eval_datasets(SMALL)
    assert [ds.f for ds, _ in items] == [4] * 8 + [6] * 8
    again = eval_datasets(SMALL)
    assert all(a[0] == b[0] for a, b in zip(items, again))
    other = eval_datasets(EvalConfig(**{**SMALL.__dict__, "seed": 4}))
    assert not items[0][0] == other[0][0]


def test_family_filter():
    cfg = EvalConfig(sizes=(5,), datasets_per_size=10, n_obs=10, n_int=10,
                     datagen=DataGenConfig(families=("watts_strogatz",)))
    assert {ds.family for ds, _ in eval_datasets(cfg)} == {"watts_strogatz"}


def test_oracle_predictions_score_one():
    items = eval_datasets(SMALL)
    report = build_report(items, [dag.adj * 0.98 + 0.01 for _, dag in items])
    o = report.overall
    assert o["roc_auc"]["mean"] == 1.0 and o["ap"]["mean"] == 1.0


def test_zero_head_is_chance():
    report = evaluate(zero_head_model(), SMALL)
    assert report.overall["roc_auc"]["mean"] == 0.5


def test_aggregates_recompute_from_records():
    items = eval_datasets(SMALL)
    rng = np.random.default_rng(0)
    report = build_report(items, [rng.random(dag.adj.shape) for _, dag in items])
    for f in ("4", "6"):
        vals = [r["ap"] for r in report.records if str(r["f"]) == f and r["ap"] is not None]
        g = report.aggregates["by_f"][f]["ap"]
        assert abs(g["mean"] - np.mean(vals)) <= 1e-12
        assert abs(g["stderr"] - np.std(vals, ddof=1) / np.sqrt(len(vals))) <= 1e-12
    assert report.aggregates == aggregate_records(report.records)
    fams = {r["family"] for r in report.records}
    assert set(report.aggregates["by_family"]) == fams


def test_empty_graph_excluded_and_counted():
    items = eval_datasets(SMALL)
    ds, dag = items[0]
    items[0] = (ds, Dag(np.zeros_like(dag.adj)))  # force an edgeless truth for one dataset
    report = build_report(items, [np.full(d.adj.shape, 0.5) for _, d in items])
    assert len(report.exclusions) >= 1
    assert report.exclusions[0]["seed"] == ds.seed
    assert report.records[0]["roc_auc"] is None and report.records[0]["ap"] is None
    assert report.overall["ap"]["n"] == len(items) - len(report.exclusions)


def test_json_schema_csv_and_plot_data(tmp_path):
    report = evaluate(zero_head_model(), SMALL, provenance={"config_hash": "abc"})
    paths = report.write(tmp_path)
    data = json.loads(paths["json"].read_text())
    jsonschema.validate(data, REPORT_SCHEMA)
    rows = list(csv.DictReader(io.StringIO(paths["csv"].read_text())))
    assert len(rows) == data["n_datasets"] - len(data["exclusions"])
    plot = json.loads(paths["plot"].read_text())
    assert plot["by_f"]["f"] == [4, 6] and len(plot["by_f"]["ap"]) == 2


def test_schema_rejects_out_of_range_metric():
    report = build_report(*(lambda items: (items, [d.adj * 1.0 for _, d in items]))(eval_datasets(SMALL)))
    data = json.loads(report.to_json())
    data["records"][0]["roc_auc"] = 1.5
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(data, REPORT_SCHEMA)
