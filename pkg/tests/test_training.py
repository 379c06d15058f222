import json
import math

import numpy as np
import pytest
import torch

from causalprobe.config import EVAL_NAMESPACE, derive_seed
from causalprobe.errors import ConfigError, FormatError
from causalprobe.evaluation import eval_datasets
from causalprobe.tensorio import decode_tensors, encode_tensors
from causalprobe.training import (
    Trainer, batch_for_step, collate, latest_checkpoint, lr_at, make_optimizer, sample_batch,
)

from conftest import tiny_config


def test_lr_schedule_closed_form():
    cfg = tiny_config(**{"train.steps": 101}).train
    assert lr_at(0, cfg) == cfg.lr
    assert abs(lr_at(100, cfg) - cfg.lr_floor) < 1e-18
    for s in range(101):
        expect = cfg.lr_floor + (cfg.lr - cfg.lr_floor) * (1 + math.cos(math.pi * s / 100)) / 2
        assert abs(lr_at(s, cfg) - expect) <= 1e-12


def test_f_distribution_proportional():
    cfg = tiny_config(**{"train.f_min": 4, "train.f_max": 20, "train.batch_size": 1}).train
    rng = np.random.default_rng(0)
    sizes = np.arange(4, 21)
    probs = sizes / sizes.sum()
    n = 100_000
    draws = rng.choice(sizes, size=n, p=probs)  # same law sample_batch uses
    c4, c20 = (draws == 4).sum(), (draws == 20).sum()
    assert abs(c20 / c4 - 5) < 3 * 5 * math.sqrt(1 / c4 + 1 / c20)
    # And sample_batch itself follows it.
    counts = {}
    from causalprobe.datagen import DataGenConfig
    for _ in range(600):
        batch = sample_batch(cfg, DataGenConfig(families=("erdos_renyi",)), rng)
        counts[batch[0][0].f] = counts.get(batch[0][0].f, 0) + 1
    assert counts.get(20, 0) > counts.get(4, 0)


def test_batches_homogeneous_and_scheme_frequency():
    cfg = tiny_config(**{"train.batch_size": 20})
    mixed = total = 0
    for step in range(40):
        batch = batch_for_step(cfg, step)
        assert len({ds.f for ds, _ in batch}) == 1
        for ds, _ in batch:
            total += 1
            mixed += ds.n_int > 0
            assert (ds.n_obs, ds.n_int) in ((16, 16), (32, 0))
    p = 0.75
    assert abs(mixed - p * total) < 3 * math.sqrt(total * p * (1 - p))


def test_batches_deterministic_and_corpus_mode():
    cfg = tiny_config()
    a, b = batch_for_step(cfg, 3), batch_for_step(cfg, 3)
    assert all(x[0] == y[0] for x, y in zip(a, b))
    corpus = tiny_config(**{"train.corpus_size": 2})
    assert all(x[0] == y[0] for x, y in zip(batch_for_step(corpus, 0), batch_for_step(corpus, 2)))


def test_training_and_eval_data_disjoint():
    cfg = tiny_config()
    train_seeds = {ds.seed for s in range(50) for ds, _ in batch_for_step(cfg, s)}
    eval_seeds = {ds.seed for ds, _ in eval_datasets(cfg.eval)}
    assert not train_seeds & eval_seeds


def test_collate_groups_by_rows():
    batch = batch_for_step(tiny_config(**{"train.batch_size": 8}), 0)
    groups = collate(batch)
    assert sum(v.shape[0] for v, _, _ in groups) == 8
    for v, m, a in groups:
        assert v.shape == m.shape and a.shape == (v.shape[0], v.shape[2], v.shape[2])


def test_weight_decay_groups():
    trainer = Trainer(tiny_config())
    decay, keep = trainer.optimizer.param_groups
    assert decay["weight_decay"] == 0.01 and keep["weight_decay"] == 0.0
    names = {id(p): n for n, p in trainer.model.learnable_parameters()}
    assert all(p.dim() > 1 for p in decay["params"])
    assert all(names[id(p)].endswith("bias") or "norm" in names[id(p)] for p in keep["params"])


def test_fixed_batch_loss_decreases():
    cfg = tiny_config(**{"train.corpus_size": 1, "train.steps": 200, "train.batch_size": 4,
                         "datagen.families": ["erdos_renyi"], "datagen.mechanisms": ["linear"],
                         "datagen.noises": ["gaussian"], "train.lr": 2e-3})
    trainer = Trainer(cfg)
    hist = trainer.run()
    assert np.mean([s.bce for s in hist[-10:]]) < np.mean([s.bce for s in hist[:10]])
    assert all(math.isfinite(s.grad_norm) for s in hist)


def test_run_directory_layout(tmp_path):
    trainer = Trainer(tiny_config(), tmp_path / "run")
    trainer.run()
    run = tmp_path / "run"
    assert (run / "config.json").exists()
    records = [json.loads(l) for l in (run / "metrics.jsonl").read_text().splitlines()]
    assert [r["step"] for r in records] == list(range(10))
    assert set(records[0]) == {"step", "bce", "h", "total", "lam", "rho", "lr", "grad_norm"}
    assert sorted(p.name for p in (run / "checkpoints").iterdir()) == ["step_10.tnsr", "step_5.tnsr"]
    assert latest_checkpoint(run).name == "step_10.tnsr"


def test_checkpoint_round_trip(tmp_path):
    trainer = Trainer(tiny_config(), tmp_path)
    trainer.run(until=5)
    back = Trainer.from_checkpoint(tmp_path / "checkpoints" / "step_5.tnsr")
    assert back.step == 5 and back.dual == trainer.dual
    for k, v in trainer.model.learnable_state().items():
        assert torch.equal(back.model.learnable_state()[k], v)
    for group_a, group_b in zip(trainer.optimizer.param_groups, back.optimizer.param_groups):
        for pa, pb in zip(group_a["params"], group_b["params"]):
            for slot, value in trainer.optimizer.state[pa].items():
                assert torch.equal(torch.as_tensor(value), torch.as_tensor(back.optimizer.state[pb][slot]))


def test_resume_matches_continuous_run(tmp_path):
    cfg = tiny_config(**{"train.checkpoint_every": 4, "train.steps": 8})
    full = Trainer(cfg)
    full.run()
    part = Trainer(cfg, tmp_path)
    part.run(until=4)
    resumed = Trainer.from_checkpoint(tmp_path / "checkpoints" / "step_4.tnsr")
    resumed.run()
    for a, b in zip(full.history[4:], resumed.history):
        assert a.step == b.step and abs(a.total - b.total) <= 1e-12


def test_corrupt_or_foreign_checkpoint_rejected(tmp_path):
    trainer = Trainer(tiny_config(), tmp_path)
    trainer.run(until=5)
    path = tmp_path / "checkpoints" / "step_5.tnsr"
    blob = bytearray(path.read_bytes())
    blob[20] ^= 0xFF
    bad = tmp_path / "bad.tnsr"
    bad.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        Trainer.from_checkpoint(bad)
    tensors, meta = decode_tensors(path.read_bytes())
    meta["format"] = 99
    (tmp_path / "v.tnsr").write_bytes(encode_tensors(tensors, meta))
    with pytest.raises(FormatError):
        Trainer.from_checkpoint(tmp_path / "v.tnsr")


def test_checkpoint_against_other_encoder_rejected(tmp_path):
    trainer = Trainer(tiny_config(), tmp_path)
    trainer.run(until=5)
    tensors, meta = decode_tensors((tmp_path / "checkpoints" / "step_5.tnsr").read_bytes())
    other = Trainer(tiny_config(**{"encoder.weight_seed": 9}))
    with pytest.raises(ConfigError):
        other.load_state(tensors, meta)
