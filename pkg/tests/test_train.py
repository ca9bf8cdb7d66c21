import dataclasses
import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from bolt.data import planted_sync_spec, synth_generate
from bolt.model import BolT
from bolt.train import TrainConfig, auroc, evaluate, one_cycle_lr, predict, train

from conftest import tiny_config


def small_task(seed, n=48, T=24):
    spec = planted_sync_spec(T=T, N=8, group=2, duration=4, smooth=1, noise=0.5)
    rng = np.random.default_rng(seed)
    return synth_generate(spec, n, rng), synth_generate(spec, 24, rng)


def small_model_config(**kw):
    return tiny_config(n_channels=8, window=8, alpha=0.5, beta=1, max_len=24, **kw)


def test_schedule_anchors():
    cfg = TrainConfig()
    total = 1000
    warm = math.ceil(0.3 * total)
    up = (cfg.lr_peak - cfg.lr_low) / warm
    down = (cfg.lr_peak - cfg.lr_final) / (total - 1 - warm)
    assert one_cycle_lr(0, total, cfg) == 2e-4
    assert abs(one_cycle_lr(warm, total, cfg) - 5e-4) <= up
    assert abs(one_cycle_lr(total - 1, total, cfg) - 2e-5) <= down
    with pytest.raises(ValueError):
        one_cycle_lr(total, total, cfg)
    with pytest.raises(ValueError):
        one_cycle_lr(-1, total, cfg)


@given(st.integers(2, 3000))
def test_schedule_is_continuous(total):
    cfg = TrainConfig()
    lrs = np.array([one_cycle_lr(s, total, cfg) for s in range(total)])
    warm = math.ceil(0.3 * total)
    slope = max((cfg.lr_peak - cfg.lr_low) / warm, (cfg.lr_peak - cfg.lr_final) / max(total - 1 - warm, 1))
    assert np.abs(np.diff(lrs)).max() <= slope + 1e-15
    assert lrs.min() >= cfg.lr_final - 1e-15 and lrs.max() <= cfg.lr_peak + 1e-15


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(warm_frac=1.0)
    with pytest.raises(ValueError):
        TrainConfig(lr_peak=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)


def test_auroc_examples():
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    with pytest.raises(ValueError):
        auroc([0.1, 0.2], [1, 1])


def _pair_count(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=30))
def test_auroc_matches_pair_counting(pairs):
    scores = [s / 5 for s, _ in pairs]
    labels = [y for _, y in pairs]
    if all(labels) or not any(labels):
        return
    assert math.isclose(auroc(scores, labels), _pair_count(scores, labels), abs_tol=1e-12)


def test_zero_epochs_leaves_parameters():
    tr, va = small_task(0)
    cfg = small_model_config()
    model = BolT(cfg, seed=3)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    res = train(tr, va, cfg, TrainConfig(epochs=0, crop_len=20), model=model)
    assert res.history == []
    for k, v in res.model.state_dict().items():
        assert torch.equal(v, before[k])


def test_training_is_deterministic_per_seed():
    tr, va = small_task(1)
    cfg = small_model_config(dropout=0.1)
    tcfg = TrainConfig(epochs=2, batch_size=8, crop_len=20, seed=5)
    a, b = train(tr, va, cfg, tcfg), train(tr, va, cfg, tcfg)
    assert [m.row() for m in a.history] == [m.row() for m in b.history]
    for (k, va_), (_, vb) in zip(a.model.state_dict().items(), b.model.state_dict().items()):
        assert torch.equal(va_, vb), k
    c = train(tr, va, cfg, dataclasses.replace(tcfg, seed=6))
    assert [m.row() for m in c.history] != [m.row() for m in a.history]


def test_single_class_and_empty_inputs_rejected():
    tr, _ = small_task(2)
    ones = [s for s in tr if s.label == 1]
    with pytest.raises(ValueError, match="two classes"):
        train(ones, None, small_model_config(), TrainConfig(epochs=1))
    with pytest.raises(ValueError, match="empty"):
        train([], None, small_model_config(), TrainConfig(epochs=1))
    with pytest.raises(ValueError, match="empty"):
        evaluate(BolT(small_model_config()), [])


def test_loss_decreases_early():
    drops = []
    for seed in range(3):
        tr, va = small_task(10 + seed, n=96)
        res = train(tr, va, small_model_config(), TrainConfig(epochs=4, batch_size=8, crop_len=24, seed=seed))
        losses = [m.train_loss for m in res.history]
        drops.append(losses[0] - losses[-1])
    assert np.mean(drops) > 0


def test_predict_and_evaluate_consistent():
    tr, va = small_task(4)
    model = BolT(small_model_config(), seed=1).eval()
    P, Y, cwr = predict(model, va)
    assert P.shape == (len(va), 2) and np.allclose(P.sum(1), 1)
    assert Y.tolist() == [s.label for s in va]
    ev = evaluate(model, va)
    assert ev["accuracy"] == float((P.argmax(1) == Y).mean())
    assert math.isclose(ev["auroc"], auroc(P[:, 1], Y == 1))
    assert cwr >= 0


def test_metric_rows_use_six_significant_digits():
    tr, va = small_task(5)
    res = train(tr, va, small_model_config(), TrainConfig(epochs=1, batch_size=16, crop_len=20))
    cells = res.history[0].row().split(",")
    assert cells[0] == "0" and len(cells) == 7
    assert all(len(c.replace("-", "").replace(".", "").split("e")[0].lstrip("0")) <= 6 for c in cells[1:])
