import dataclasses
import time

import numpy as np
import pytest
import torch

from bolt.data import planted_sync_spec, synth_generate
from bolt.model import ModelConfig
from bolt.train import TrainConfig, evaluate, train

torch.set_num_threads(1)

# acceptance verdicts, printed in the terminal summary
VERDICTS: dict[str, tuple[bool, str]] = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    VERDICTS[criterion] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(VERDICTS):
        passed, detail = VERDICTS[name]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")


@pytest.fixture
def f64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


def tiny_config(**kw) -> ModelConfig:
    base = dict(n_channels=4, dim=8, heads=2, blocks=2, window=4, alpha=0.5, beta=1,
                dropout=0.0, max_len=12)
    base.update(kw)
    return ModelConfig(**base)


# --- desk-scale training runs shared by the slow tests ------------------------

ABLATIONS = {
    "full": {},
    "no_cls": {"use_cls": False},
    "no_windowing": {"use_windowing": False},
    "no_fusion": {"use_fusion": False},
    "no_cross_attn": {"use_cross_attn": False},
    "no_cwr": {"use_cwr": False},
}
SEEDS = (0, 1, 2, 3, 4)


def desk_data(seed: int):
    spec = planted_sync_spec()
    rng = np.random.default_rng(1000 + seed)
    return synth_generate(spec, 800, rng), synth_generate(spec, 200, rng)


class DeskRuns:
    """Lazily trained desk-scale models, one per (variant, seed)."""

    def __init__(self):
        self._runs = {}

    def get(self, variant: str, seed: int):
        key = (variant, seed)
        if key not in self._runs:
            tr, va = desk_data(seed)
            cfg = dataclasses.replace(ModelConfig(), **ABLATIONS[variant])
            t0 = time.perf_counter()
            res = train(tr, va, cfg, TrainConfig(seed=seed))
            elapsed = time.perf_counter() - t0
            ev = evaluate(res.model, va)
            self._runs[key] = dict(result=res, eval=ev, seconds=elapsed, val=va)
        return self._runs[key]


@pytest.fixture(scope="session")
def desk_runs():
    return DeskRuns()
