"""Seeded synthetic minute markets in the package CSV schema.

Order-book snapshots are taken at bar close: the mid price of the book equals
the bar's close and the five levels fan out symmetrically from it.
"""

from __future__ import annotations

import numpy as np

from .market_data import LEVELS, MarketSeries, validate_series

DEFAULT_START_TS = 28_000_000  # epoch minutes, mid-2023


def series_from_closes(
    closes,
    seed: int | None = None,
    start_ts: int = DEFAULT_START_TS,
    spread_frac: float = 2e-4,
    tick_frac: float = 1e-4,
    wick_frac: float = 2e-4,
) -> MarketSeries:
    """Wrap a close-price path into valid bars and books.

    With ``seed=None`` everything besides the closes is deterministic and
    constant in shape (fixed wicks, fixed book quantities).
    """
    c = np.asarray(closes, dtype=float)
    n = len(c)
    rng = np.random.default_rng(seed) if seed is not None else None
    o = np.concatenate([[c[0]], c[:-1]])
    if rng is None:
        up = np.full(n, wick_frac)
        dn = np.full(n, wick_frac)
        bid_qty = np.tile(1.0 + 0.5 * np.arange(LEVELS), (n, 1))
        ask_qty = bid_qty.copy()
        volume = np.full(n, 10.0)
    else:
        up = rng.uniform(0.0, 2.0 * wick_frac, n)
        dn = rng.uniform(0.0, 2.0 * wick_frac, n)
        bid_qty = np.round(rng.lognormal(0.0, 0.6, (n, LEVELS)), 4) + 0.001
        ask_qty = np.round(rng.lognormal(0.0, 0.6, (n, LEVELS)), 4) + 0.001
        volume = np.round(rng.lognormal(2.0, 0.8, n), 4)
    high = np.maximum(o, c) * (1.0 + up)
    low = np.minimum(o, c) * (1.0 - dn)
    lvl = np.arange(LEVELS)
    half = c * spread_frac / 2.0
    tick = c * tick_frac
    bid_px = c[:, None] - half[:, None] - lvl[None, :] * tick[:, None]
    ask_px = c[:, None] + half[:, None] + lvl[None, :] * tick[:, None]
    s = MarketSeries(
        ts=np.arange(start_ts, start_ts + n, dtype=np.int64),
        open=o, high=high, low=low, close=c, volume=volume,
        bid_px=bid_px, bid_qty=bid_qty, ask_px=ask_px, ask_qty=ask_qty,
    )
    validate_series(s)
    return s


def regime_switching_closes(n: int, seed: int, base: float = 100.0, period: int = 1440,
                            mean_regime: int = 360) -> np.ndarray:
    """Sine trend plus noise whose drift and volatility switch between regimes."""
    rng = np.random.default_rng(seed)
    drifts = np.array([-4e-5, 0.0, 4e-5])
    vols = np.array([2e-4, 8e-4])
    step_drift = np.empty(n)
    step_vol = np.empty(n)
    i = 0
    while i < n:
        length = int(rng.geometric(1.0 / mean_regime))
        j = min(n, i + max(length, 30))
        step_drift[i:j] = drifts[rng.integers(len(drifts))]
        step_vol[i:j] = vols[rng.integers(len(vols))]
        i = j
    t = np.arange(n)
    noise = rng.standard_normal(n) * step_vol
    log_p = np.log(base) + 0.01 * np.sin(2 * np.pi * t / period) + np.cumsum(step_drift + noise)
    return np.exp(log_p)


def synthetic_series(days: int, seed: int, start_ts: int = DEFAULT_START_TS, base: float = 100.0) -> MarketSeries:
    n = int(days) * 1440
    closes = np.round(regime_switching_closes(n, seed, base=base), 6)
    return series_from_closes(closes, seed=seed + 1, start_ts=start_ts)


def sawtooth_closes(n: int, rise: int = 30, fall: int = 30, step: float = 0.5, base: float = 100.0) -> np.ndarray:
    """Deterministic triangle wave: ``rise`` up-steps followed by ``fall`` down-steps."""
    moves = np.concatenate([np.full(rise, step), np.full(fall, -step * rise / fall)])
    reps = n // len(moves) + 1
    path = np.concatenate([[0.0], np.tile(moves, reps)])[:n]
    return base + np.cumsum(path)


def two_regime_closes(n: int, block: int = 240, step: float = 0.1, base: float = 100.0,
                      seed: int | None = None, noise: float = 0.0) -> np.ndarray:
    """Alternating blocks of steady up-drift and steady down-drift (equal magnitude)."""
    t = np.arange(n)
    direction = np.where((t // block) % 2 == 0, 1.0, -1.0)
    moves = direction * step
    if seed is not None and noise > 0:
        moves = moves + np.random.default_rng(seed).standard_normal(n) * noise
    moves[0] = 0.0
    return base + np.cumsum(moves)
