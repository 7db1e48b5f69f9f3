"""Long-only, single-lot trading environment on minute closes.

The position is 0 or 1 lot of ``m_size`` units. Changing position at minute
``t`` costs ``fee_rate * close[t] * m_size`` per unit of change, charged at the
current close. The reward of a step is the net-value change it causes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import InsufficientHistory, SteppedAfterDone

MIN_START = 59  # first index with a full 60-minute context window


@dataclass(frozen=True)
class EnvConfig:
    fee_rate: float = 0.0002
    m_size: float = 1.0
    gamma: float = 0.99
    initial_cash_multiple: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.fee_rate < 1.0:
            raise ValueError(f"fee_rate must be in [0, 1), got {self.fee_rate}")
        if self.m_size <= 0:
            raise ValueError(f"m_size must be > 0, got {self.m_size}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")


def step_reward(p_now: float, p_next: float, position: int, action: int, fee_rate: float, m_size: float) -> float:
    """``(a * (p_next - p_now) - fee_rate * p_now * |a - P|) * m``."""
    return (action * (p_next - p_now) - fee_rate * p_now * abs(action - position)) * m_size


def reward_table(closes, fee_rate: float, m_size: float) -> np.ndarray:
    """r[t, P, a] for every step t in ``[0, T-1)`` of a close path."""
    p = np.asarray(closes, dtype=float)
    dp = p[1:] - p[:-1]
    fee = fee_rate * p[:-1]
    r = np.empty((len(dp), 2, 2))
    for pos in (0, 1):
        for a in (0, 1):
            r[:, pos, a] = (a * dp - fee * abs(a - pos)) * m_size
    return r


@dataclass(frozen=True)
class EnvState:
    t: int
    position: int
    cash: float
    net_value: float
    done: bool = False


@dataclass(frozen=True)
class Transition:
    t: int
    position: int
    action: int
    reward: float
    next_t: int
    done: bool
    fee: float = 0.0
    net_value: float = 0.0


class TradingEnv:
    """Steps through ``closes[start..end]``; the last index yields no transition."""

    def __init__(self, closes, config: EnvConfig = EnvConfig(), end: int | None = None, min_start: int = MIN_START):
        self.closes = np.asarray(closes, dtype=float)
        self.config = config
        self.end = len(self.closes) - 1 if end is None else int(end)
        self.min_start = min_start

    def reset(self, start: int, initial_position: int = 0) -> EnvState:
        if start < self.min_start:
            raise InsufficientHistory(f"start={start} needs {self.min_start} minutes of history", start=start)
        if start >= self.end:
            raise InsufficientHistory(f"start={start} leaves no step before end={self.end}")
        if initial_position not in (0, 1):
            raise ValueError("initial_position must be 0 or 1")
        p = self.closes[start]
        m = self.config.m_size
        cash = self.config.initial_cash_multiple * m * p - initial_position * m * p
        return EnvState(t=start, position=initial_position, cash=cash, net_value=cash + initial_position * m * p)

    def step(self, state: EnvState, action: int) -> tuple[EnvState, float, float]:
        """Advance one minute. Returns ``(next_state, reward, fee)``."""
        if state.done:
            raise SteppedAfterDone(f"episode ended at t={state.t}")
        a = int(action)
        cfg = self.config
        t = state.t
        p_now, p_next = self.closes[t], self.closes[t + 1]
        fee = cfg.fee_rate * p_now * cfg.m_size * abs(a - state.position)
        cash = state.cash - (a - state.position) * cfg.m_size * p_now - fee
        net = cash + a * cfg.m_size * p_next
        r = step_reward(p_now, p_next, state.position, a, cfg.fee_rate, cfg.m_size)
        nxt = replace(state, t=t + 1, position=a, cash=cash, net_value=net, done=(t + 1 >= self.end))
        return nxt, r, fee


def episode(env: TradingEnv, start: int, policy, initial_position: int = 0):
    """Roll ``policy(t, position) -> action`` from ``start`` to ``env.end``.

    Returns ``(transitions, initial_net_value, final_net_value)``.
    """
    state = env.reset(start, initial_position)
    v0 = state.net_value
    out = []
    while not state.done:
        a = int(policy(state.t, state.position))
        nxt, r, fee = env.step(state, a)
        out.append(Transition(state.t, state.position, a, r, nxt.t, nxt.done, fee, nxt.net_value))
        state = nxt
    return out, v0, state.net_value


def write_trade_log(path, transitions, closes, timestamps) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ts", "action", "position", "price", "fee", "reward", "net_value"])
        for tr in transitions:
            w.writerow([int(timestamps[tr.t]), tr.action, tr.position, repr(float(closes[tr.t])),
                        repr(float(tr.fee)), repr(float(tr.reward)), repr(float(tr.net_value))])
