"""Backtesting: policy rollouts, performance metrics and rule-based baselines.

Metrics use simple minute returns ``r_t = (V_{t+1} - V_t) / V_t`` of the net
value, population standard deviations and ``MINUTES_PER_YEAR`` for
annualization. A ratio whose denominator is zero is reported as ``None``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import EnvConfig, Transition, TradingEnv
from .errors import SeriesTooShort
from .indicators import SINGLE_NAMES, single_feature_matrix
from .market_data import MarketSeries

MINUTES_PER_YEAR = 525_600
METRIC_NAMES = ("TR", "AVOL", "MDD", "ASR", "ACR", "ASoR")
# below this a standard deviation or drawdown counts as zero
DEGENERATE_TOL = 1e-14


def returns(net_values) -> np.ndarray:
    v = np.asarray(net_values, dtype=float)
    return v[1:] / v[:-1] - 1.0


def max_drawdown(net_values) -> float:
    v = np.asarray(net_values, dtype=float)
    peak = np.maximum.accumulate(v)
    return float(np.max((peak - v) / peak))


def metrics(net_values) -> dict[str, float | None]:
    v = np.asarray(net_values, dtype=float)
    if len(v) < 2:
        raise SeriesTooShort("metrics need at least two net values")
    if np.any(v <= 0):
        raise ValueError("net values must be positive")
    r = returns(v)
    m = MINUTES_PER_YEAR
    mean = float(r.mean())
    sigma = float(r.std())
    mdd = max_drawdown(v)
    neg = r[r < 0]
    dd = float(neg.std()) if len(neg) else 0.0
    return {
        "TR": float((v[-1] - v[0]) / v[0]),
        "AVOL": sigma * math.sqrt(m),
        "MDD": mdd,
        "ASR": mean / sigma * math.sqrt(m) if sigma > DEGENERATE_TOL else None,
        "ACR": mean / mdd * m if mdd > DEGENERATE_TOL else None,
        "ASoR": mean / dd * math.sqrt(m) if dd > DEGENERATE_TOL else None,
    }


@dataclass
class BacktestReport:
    net_values: np.ndarray
    actions: np.ndarray
    positions: np.ndarray  # position held before each action
    transitions: list[Transition] = field(repr=False)
    start: int = 0
    metrics: dict = field(default_factory=dict)

    @property
    def trade_count(self) -> int:
        return int(np.sum(self.actions != self.positions))

    @property
    def total_reward(self) -> float:
        return float(sum(tr.reward for tr in self.transitions))

    def summary(self) -> dict:
        return {**self.metrics, "trades": self.trade_count, "steps": len(self.actions)}


def run(policy, closes, start: int, end: int | None = None, env_config: EnvConfig = EnvConfig(),
        initial_position: int = 0) -> BacktestReport:
    """Roll ``policy(t, position) -> action`` from ``start`` to ``end`` (inclusive)."""
    env = TradingEnv(closes, env_config, end=end)
    state = env.reset(start, initial_position)
    values, acts, poss, trans = [state.net_value], [], [], []
    while not state.done:
        a = int(policy(state.t, state.position))
        nxt, r, fee = env.step(state, a)
        trans.append(Transition(state.t, state.position, a, r, nxt.t, nxt.done, fee, nxt.net_value))
        values.append(nxt.net_value)
        acts.append(a)
        poss.append(state.position)
        state = nxt
    v = np.asarray(values)
    return BacktestReport(v, np.asarray(acts, dtype=np.int64), np.asarray(poss, dtype=np.int64), trans,
                          start, metrics(v))


def sequence_policy(actions, offset: int = 0):
    """Policy that plays ``actions[t - offset]`` regardless of position."""
    acts = np.asarray(actions, dtype=np.int64)
    return lambda t, position: int(acts[t - offset])


def table_policy(q_table, offset: int):
    """Greedy policy from ``Q[t - offset, P, a]`` (ties go to action 0)."""
    return lambda t, position: int(np.argmax(q_table[t - offset, position]))


def flat_policy(t, position):
    return 0


def buy_and_hold_policy(t, position):
    return 1


def ema(x, period: int) -> np.ndarray:
    """Exponential moving average, alpha = 2 / (period + 1), seeded with the first value."""
    x = np.asarray(x, dtype=float)
    alpha = 2.0 / (period + 1)
    out = np.empty_like(x)
    out[0] = x[0]
    for i in range(1, len(x)):
        out[i] = alpha * x[i] + (1 - alpha) * out[i - 1]
    return out


def macd_actions(closes, fast: int = 12, slow: int = 26, signal: int = 9) -> np.ndarray:
    """Long while the MACD line is strictly above its signal line; flat during warm-up."""
    c = np.asarray(closes, dtype=float)
    if len(c) <= slow:
        raise SeriesTooShort(f"MACD needs more than {slow} closes, got {len(c)}")
    line = ema(c, fast) - ema(c, slow)
    sig = ema(line, signal)
    out = (line > sig).astype(np.int64)
    out[:slow] = 0
    return out


def iv_actions(imbalance, threshold: float = 0.2, initial_position: int = 0) -> np.ndarray:
    """Hysteresis on order-book imbalance: long above ``threshold``, flat below ``-threshold``."""
    pos = initial_position
    out = np.empty(len(imbalance), dtype=np.int64)
    for i, x in enumerate(np.asarray(imbalance, dtype=float)):
        if x > threshold:
            pos = 1
        elif x < -threshold:
            pos = 0
        out[i] = pos
    return out


def volume_imbalance(series: MarketSeries) -> np.ndarray:
    return single_feature_matrix(series)[:, SINGLE_NAMES.index("volume_imbalance")]


def baseline_reports(series: MarketSeries, start: int, end: int, env_config: EnvConfig = EnvConfig(),
                     macd=(12, 26, 9), iv_threshold: float = 0.2) -> dict[str, BacktestReport]:
    closes = np.asarray(series.close, dtype=float)
    return {
        "buy_and_hold": run(buy_and_hold_policy, closes, start, end, env_config),
        "macd": run(sequence_policy(macd_actions(closes, *macd)), closes, start, end, env_config),
        "iv": run(sequence_policy(iv_actions(volume_imbalance(series), iv_threshold)), closes, start, end,
                  env_config),
    }
