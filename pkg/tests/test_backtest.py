from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hftmix.backtest import (
    baseline_reports,
    buy_and_hold_policy,
    flat_policy,
    iv_actions,
    macd_actions,
    max_drawdown,
    metrics,
    run,
    sequence_policy,
)
from hftmix.env import EnvConfig
from hftmix.errors import SeriesTooShort
from hftmix.market_data import LEVELS
from hftmix.synth import series_from_closes

from oracles import metric_row, rel_close


def test_metric_examples():
    m = metrics([100.0, 101.0, 100.0])
    assert abs(m["TR"]) < 1e-15 and m["MDD"] == pytest.approx(1 / 101, abs=1e-12)
    m = metrics([100.0] * 5)
    assert m["TR"] == m["AVOL"] == m["MDD"] == 0.0
    assert m["ASR"] is None and m["ACR"] is None and m["ASoR"] is None
    m = metrics([100.0, 110.0])
    assert m["TR"] == pytest.approx(0.10) and m["ASR"] is None


def test_metrics_match_oracle_on_random_series():
    rng = np.random.default_rng(2024)
    for _ in range(10):
        v = 1000 * np.cumprod(1 + rng.normal(0.0001, 0.002, int(rng.integers(20, 500))))
        ours, ref = metrics(v), metric_row(v.tolist())
        for k, r in ref.items():
            assert r is not None and ours[k] is not None
            assert rel_close(ours[k], r, 1e-9), (k, ours[k], r)


@given(seed=st.integers(0, 100_000), n=st.integers(2, 200))
def test_metric_ranges(seed, n):
    v = 100 * np.cumprod(1 + np.random.default_rng(seed).normal(0, 0.05, n).clip(-0.5, 0.5))
    m = metrics(v)
    assert 0.0 <= m["MDD"] < 1.0 and m["TR"] > -1.0 and m["AVOL"] >= 0.0
    assert max_drawdown(v) == m["MDD"]


def _closes(n=200, seed=0):
    return 100 + np.cumsum(np.random.default_rng(seed).normal(0, 0.3, n))


def test_flat_policy_run():
    rep = run(flat_policy, _closes(), 59)
    assert rep.metrics["TR"] == 0.0 and rep.metrics["MDD"] == 0.0 and rep.trade_count == 0


def test_buy_and_hold_doubling():
    closes = np.linspace(50, 100, 160)
    cfg = EnvConfig(fee_rate=0.0, m_size=2.0)
    rep = run(buy_and_hold_policy, closes, 59, env_config=cfg)
    gain = rep.net_values[-1] - rep.net_values[0]
    assert gain == pytest.approx(2.0 * (closes[-1] - closes[59]), rel=1e-12)
    assert rep.metrics["TR"] == pytest.approx(gain / rep.net_values[0], rel=1e-12)


@given(seed=st.integers(0, 100_000))
def test_run_accounting_and_trade_count(seed):
    rng = np.random.default_rng(seed)
    closes = _closes(150, seed)
    closes = closes - closes.min() + 20
    acts = rng.integers(0, 2, 150)
    rep = run(sequence_policy(acts), closes, 59, env_config=EnvConfig(fee_rate=float(rng.uniform(0, 1e-3))))
    assert abs(rep.total_reward - (rep.net_values[-1] - rep.net_values[0])) < 1e-9
    assert rep.trade_count == int(np.sum(rep.actions != rep.positions))
    assert np.array_equal(rep.positions[1:], rep.actions[:-1])


def test_run_is_deterministic():
    closes = _closes()
    a = run(sequence_policy(macd_actions(closes)), closes, 59)
    b = run(sequence_policy(macd_actions(closes)), closes, 59)
    assert np.array_equal(a.net_values, b.net_values) and a.metrics == b.metrics


def test_macd_examples():
    rising = 100 + 0.1 * np.arange(300) + 0.001 * np.arange(300) ** 1.5
    acts = macd_actions(rising)
    assert acts[:26].sum() == 0 and acts[26:].mean() > 0.9
    assert macd_actions(np.full(100, 7.0)).sum() == 0
    with pytest.raises(SeriesTooShort):
        macd_actions(np.ones(26))


def test_iv_examples():
    assert list(iv_actions([0.3, 0.1, -0.3], 0.2)) == [1, 1, 0]
    assert list(iv_actions([0.0, 0.0], 0.2, initial_position=1)) == [1, 1]
    assert list(iv_actions([1.0], 0.2)) == [1]


def test_iv_from_book_extremes():
    s = series_from_closes(np.full(120, 100.0))
    s = dataclasses.replace(s, ask_qty=np.zeros((120, LEVELS)), bid_qty=np.tile(np.arange(1.0, LEVELS + 1), (120, 1)))
    reps = baseline_reports(s, 59, 119, EnvConfig(fee_rate=0.0))
    assert set(reps) == {"buy_and_hold", "macd", "iv"}
    assert np.all(reps["iv"].actions == 1)
