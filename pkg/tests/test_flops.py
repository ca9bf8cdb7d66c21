import dataclasses

import pytest

from bolt.flops import TERMS, bench, flop_model, format_reports
from bolt.model import ModelConfig


def test_windowed_count_is_linear_in_length():
    cfg = ModelConfig()
    for T in (150, 300, 600):
        r = flop_model(2 * T, cfg).total / flop_model(T, cfg).total
        assert 1.9 <= r <= 2.1, (T, r)


def test_global_window_attention_is_quadratic():
    cfg = ModelConfig(use_windowing=False, max_len=1200)
    r = flop_model(600, cfg).terms["qk"] / flop_model(300, cfg).terms["qk"]
    # (1 + 2T)^2 / (1 + T)^2 with the CLS row and column
    assert r == pytest.approx((601**2) / (301**2))
    assert r == pytest.approx(4.0, abs=0.03)


def test_halving_stride_doubles_windows_for_wide_model():
    # at D=400 the per-token projections are a small share and the ratio lands in range
    wide = dataclasses.replace(ModelConfig(), dim=400, heads=8, n_channels=400)
    half = dataclasses.replace(wide, alpha=0.2)
    a, b = flop_model(1200, wide), flop_model(1200, half)
    assert b.F / a.F == pytest.approx(2.0, abs=0.05)
    assert 1.8 <= b.total / a.total <= 2.2


def test_count_by_hand_for_one_block():
    cfg = ModelConfig(n_channels=2, dim=4, heads=2, blocks=1, window=4, alpha=1.0, beta=0, max_len=8)
    r = flop_model(8, cfg)
    # F=2 windows, Q=K=5 with CLS, D=4
    assert r.F == 2
    assert r.per_block[0] == {"qk": 2 * 25 * 4, "av": 2 * 25 * 4, "proj": 2 * 5 * 2 * 16 + (8 + 2) * 2 * 16}
    assert set(r.terms) == set(TERMS)


def test_count_is_pure():
    cfg = ModelConfig()
    assert flop_model(300, cfg) == flop_model(300, cfg)


def test_bench_report_table():
    reps = bench([60, 120], ModelConfig(), repeats=1)
    assert all(r.seconds > 0 for r in reps)
    text = format_reports(reps)
    lines = text.splitlines()
    assert lines[0].split("\t")[0] == "T" and len(lines) == 4
    assert lines[-1].startswith("flop_ratio(T=120/T=60)")
