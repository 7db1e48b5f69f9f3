"""Technical indicators from OHLCV bars and order-book snapshots.

Features split into two groups:

* single-state features, a function of the current frame only;
* context features, which need the 60-minute backward window (log returns
  against the previous minute and rolling z-score "trend" features).

Conventions: rolling statistics use the population (divide-by-n) standard
deviation, floored at ``STD_FLOOR``; ratio indicators on a bar with
``high == low`` are 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateBar, EmptyTraining, InsufficientHistory
from .market_data import LEVELS, MarketFrame, MarketSeries

CONTEXT_WINDOW = 60
STD_FLOOR = 1e-8

SINGLE_NAMES = (
    ["max_oc", "min_oc", "kmid", "kmid2", "klen", "kup", "kup2", "klow", "klow2", "ksft", "ksft2", "volume"]
    + [f"bid_{i}_size_n" for i in range(1, LEVELS + 1)]
    + [f"ask_{i}_size_n" for i in range(1, LEVELS + 1)]
    + ["wap1", "wap2", "wap_balance", "buy_spread", "sell_spread", "buy_volume", "sell_volume",
       "volume_imbalance", "price_spread", "sell_vwap", "buy_vwap"]
)

LOG_RETURN_NAMES = [
    "log_return_bid_1_price", "log_return_bid_2_price",
    "log_return_ask_1_price", "log_return_ask_2_price",
    "log_return_wap1", "log_return_wap2",
]
# Only levels 1 and 2 of the book prices get a trend feature.
TREND_SOURCES = ["ask_1_price", "ask_2_price", "bid_1_price", "bid_2_price", "buy_spread", "sell_spread",
                 "wap1", "wap2", "sell_vwap", "buy_vwap", "volume"]
TREND_NAMES = [f"{y}_trend" for y in TREND_SOURCES]
CONTEXT_NAMES = LOG_RETURN_NAMES + TREND_NAMES

# columns z-scored by the training Normalizer: all single features + log returns
SCALED_NAMES = list(SINGLE_NAMES) + LOG_RETURN_NAMES

N_SINGLE = len(SINGLE_NAMES)
N_CONTEXT = len(CONTEXT_NAMES)


def _ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


def _single_block(o, h, l, c, bid_px, bid_qty, ask_px, ask_qty):
    """Vectorized single-state features; every argument has a leading row axis."""
    max_oc = np.maximum(o, c)
    min_oc = np.minimum(o, c)
    rng = h - l
    kmid = c - o
    klen = rng
    kup = h - max_oc
    ksft = 2 * c - h - l
    buy_volume = bid_qty.sum(axis=1)
    sell_volume = ask_qty.sum(axis=1)
    volume = (bid_qty + ask_qty).sum(axis=1)
    bid_n = _ratio(bid_qty, volume[:, None])
    ask_n = _ratio(ask_qty, volume[:, None])
    mid1 = (bid_px[:, 0] + ask_px[:, 0]) / 2
    mid2 = (bid_px[:, 1] + ask_px[:, 1]) / 2
    d1 = ask_qty[:, 0] + bid_qty[:, 0]
    d2 = ask_qty[:, 1] + bid_qty[:, 1]
    wap1 = np.where(d1 > 0, _ratio(ask_qty[:, 0] * bid_px[:, 0] + bid_qty[:, 0] * ask_px[:, 0], d1), mid1)
    wap2 = np.where(d2 > 0, _ratio(ask_qty[:, 1] * bid_px[:, 1] + bid_qty[:, 1] * ask_px[:, 1], d2), mid2)
    cols = [
        max_oc, min_oc, kmid, _ratio(kmid, rng), klen, kup, _ratio(kup, rng),
        # klow and klow2 share one formula in the indicator table
        _ratio(min_oc - l, rng), _ratio(min_oc - l, rng),
        ksft, _ratio(ksft, rng), volume,
    ]
    cols += [bid_n[:, i] for i in range(LEVELS)] + [ask_n[:, i] for i in range(LEVELS)]
    cols += [
        wap1, wap2, np.abs(wap1 - wap2),
        np.abs(bid_px[:, 0] - bid_px[:, LEVELS - 1]),
        np.abs(ask_px[:, 0] - ask_px[:, LEVELS - 1]),
        buy_volume, sell_volume,
        _ratio(buy_volume - sell_volume, buy_volume + sell_volume),
        2 * (ask_px[:, 0] - bid_px[:, 0]) / (ask_px[:, 0] + bid_px[:, 0]),
        (ask_n * ask_px).sum(axis=1),
        (bid_n * bid_px).sum(axis=1),
    ]
    return np.column_stack(cols)


def single_features(frame: MarketFrame, strict: bool = False) -> np.ndarray:
    """Single-state feature vector of one frame, ordered as ``SINGLE_NAMES``."""
    if strict and frame.high == frame.low:
        raise DegenerateBar(f"high == low == {frame.high} at ts={frame.timestamp}")
    arr = lambda v: np.array([v], dtype=float)  # noqa: E731
    bids = np.array(frame.bids, dtype=float)
    asks = np.array(frame.asks, dtype=float)
    return _single_block(arr(frame.open), arr(frame.high), arr(frame.low), arr(frame.close),
                         bids[None, :, 0], bids[None, :, 1], asks[None, :, 0], asks[None, :, 1])[0]


def single_feature_matrix(series: MarketSeries) -> np.ndarray:
    return _single_block(series.open, series.high, series.low, series.close,
                         series.bid_px, series.bid_qty, series.ask_px, series.ask_qty)


def _trend_inputs(series: MarketSeries, single: np.ndarray) -> np.ndarray:
    idx = {n: i for i, n in enumerate(SINGLE_NAMES)}
    return np.column_stack([
        series.ask_px[:, 0], series.ask_px[:, 1], series.bid_px[:, 0], series.bid_px[:, 1],
        single[:, idx["buy_spread"]], single[:, idx["sell_spread"]],
        single[:, idx["wap1"]], single[:, idx["wap2"]],
        single[:, idx["sell_vwap"]], single[:, idx["buy_vwap"]], single[:, idx["volume"]],
    ])


def _log_return_inputs(series: MarketSeries, single: np.ndarray) -> np.ndarray:
    idx = {n: i for i, n in enumerate(SINGLE_NAMES)}
    return np.column_stack([
        series.bid_px[:, 0], series.bid_px[:, 1], series.ask_px[:, 0], series.ask_px[:, 1],
        single[:, idx["wap1"]], single[:, idx["wap2"]],
    ])


def context_features(window: MarketSeries) -> np.ndarray:
    """Context features at the last frame of a 60-minute window, ordered as ``CONTEXT_NAMES``."""
    if len(window) != CONTEXT_WINDOW:
        raise InsufficientHistory(f"context window needs exactly {CONTEXT_WINDOW} frames, got {len(window)}")
    single = single_feature_matrix(window)
    lr_src = _log_return_inputs(window, single)
    log_ret = np.log(lr_src[-1] / lr_src[-2])
    # centre on the first row so a flat window gives an exact zero numerator
    y = _trend_inputs(window, single)
    d = y - y[0]
    std = np.maximum(d.std(axis=0), STD_FLOOR)
    return np.concatenate([log_ret, (d[-1] - d.mean(axis=0)) / std])


def context_feature_matrix(series: MarketSeries) -> np.ndarray:
    """Context features for every index; rows before index 59 are NaN."""
    n = len(series)
    out = np.full((n, N_CONTEXT), np.nan)
    if n < CONTEXT_WINDOW:
        return out
    single = single_feature_matrix(series)
    lr_src = _log_return_inputs(series, single)
    out[1:, :len(LOG_RETURN_NAMES)] = np.log(lr_src[1:] / lr_src[:-1])
    y = _trend_inputs(series, single)
    win = sliding_window_view(y, CONTEXT_WINDOW, axis=0)  # (n-59, k, 60)
    d = win - win[..., :1]
    std = np.maximum(d.std(axis=-1), STD_FLOOR)
    out[CONTEXT_WINDOW - 1:, len(LOG_RETURN_NAMES):] = (d[..., -1] - d.mean(axis=-1)) / std
    out[:CONTEXT_WINDOW - 1] = np.nan
    return out


@dataclass(frozen=True)
class Normalizer:
    """Per-column affine z-score ``(x - mean) / std`` with ``std >= STD_FLOOR``."""

    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {n: {"mean": float(m), "std": float(s)} for n, m, s in zip(self.names, self.mean, self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> Normalizer:
        names = tuple(d)
        return cls(names, np.array([d[n]["mean"] for n in names]), np.array([d[n]["std"] for n in names]))


def fit_normalizer(rows: np.ndarray, names=None) -> Normalizer:
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise EmptyTraining("normalizer needs at least 2 training rows")
    names = tuple(names) if names is not None else tuple(f"f{i}" for i in range(rows.shape[1]))
    return Normalizer(names, rows.mean(axis=0), np.maximum(rows.std(axis=0), STD_FLOOR))


def apply_normalizer(norm: Normalizer, x: np.ndarray) -> np.ndarray:
    return norm.apply(x)


@dataclass
class FeatureTable:
    """Raw feature matrices for a whole series, row-aligned with its frames."""

    single: np.ndarray   # (n, N_SINGLE)
    context: np.ndarray  # (n, N_CONTEXT), NaN for the first 59 rows

    @classmethod
    def from_series(cls, series: MarketSeries) -> FeatureTable:
        return cls(single_feature_matrix(series), context_feature_matrix(series))

    def scaled_block(self) -> np.ndarray:
        return np.concatenate([self.single, self.context[:, :len(LOG_RETURN_NAMES)]], axis=1)

    def fit_normalizer(self, start: int, stop: int) -> Normalizer:
        lo = max(start, CONTEXT_WINDOW - 1)
        return fit_normalizer(self.scaled_block()[lo:stop], SCALED_NAMES)

    def normalized(self, norm: Normalizer) -> tuple[np.ndarray, np.ndarray]:
        """(s1, s2) model inputs: scaled single features and context with scaled log returns."""
        z = norm.apply(self.scaled_block())
        s1 = z[:, :N_SINGLE]
        s2 = np.concatenate([z[:, N_SINGLE:], self.context[:, len(LOG_RETURN_NAMES):]], axis=1)
        return s1, s2

    def to_csv(self, path, timestamps=None) -> None:
        df = pd.DataFrame(np.concatenate([self.single, self.context], axis=1),
                          columns=list(SINGLE_NAMES) + CONTEXT_NAMES)
        if timestamps is not None:
            df.insert(0, "ts", np.asarray(timestamps))
        df.to_csv(path, index=False)
