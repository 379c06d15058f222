import numpy as np
import pytest
import torch

from causalprobe.config import resolve


def tiny_config(**overrides):
    """A configuration small enough for a training step in well under a second."""
    base = {
        "encoder.d": 16, "encoder.n_layers": 2, "encoder.n_heads": 2, "encoder.ff_hidden": 32,
        "decoder.n_tokens": 4, "decoder.n_heads": 2, "decoder.ff_hidden": 32,
        "train.steps": 10, "train.batch_size": 2, "train.f_min": 3, "train.f_max": 5,
        "train.mixed_obs": 16, "train.mixed_int": 16, "train.obs_only": 32, "train.layer": 1,
        "train.log_every": 1, "train.checkpoint_every": 5,
        "eval.sizes": [4], "eval.datasets_per_size": 6, "eval.n_obs": 20, "eval.n_int": 20,
    }
    base.update(overrides)
    return resolve("desk", overrides=base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(config.acceptance_lines, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records one PASS/FAIL line and asserts ``ok``."""
    def record(number: int, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        assert ok, line
    return record
