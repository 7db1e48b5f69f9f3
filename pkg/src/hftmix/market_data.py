"""Minute-bar OHLCV + 5-level order book series: loading, validation, slicing."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    GapInSeries,
    InsufficientHistory,
    InvalidFrame,
    MissingColumn,
    NonMonotonicTimestamps,
    RangeOutOfBounds,
)

LEVELS = 5

BID_PX = [f"bid_px_{i}" for i in range(1, LEVELS + 1)]
BID_QTY = [f"bid_qty_{i}" for i in range(1, LEVELS + 1)]
ASK_PX = [f"ask_px_{i}" for i in range(1, LEVELS + 1)]
ASK_QTY = [f"ask_qty_{i}" for i in range(1, LEVELS + 1)]
COLUMNS = ["ts", "open", "high", "low", "close", "volume"] + BID_PX + BID_QTY + ASK_PX + ASK_QTY


@dataclass(frozen=True)
class MarketFrame:
    """One minute: OHLCV bar plus the order-book snapshot taken at bar close."""

    timestamp: int
    open: float
    high: float
    low: float
    close: float
    volume: float
    bids: tuple[tuple[float, float], ...]
    asks: tuple[tuple[float, float], ...]

    def violation(self) -> str | None:
        """Name of the first broken frame invariant, or None if the frame is valid."""
        s = MarketSeries.from_frames([self], validate=False)
        bad = _frame_violations(s)
        return bad[0][1] if bad else None


@dataclass(frozen=True, eq=False)
class MarketSeries:
    """Immutable, time-ordered minute series stored column-wise.

    ``bid_px``/``bid_qty``/``ask_px``/``ask_qty`` have shape ``(n, 5)``;
    level 1 is the best quote.
    """

    ts: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray
    bid_px: np.ndarray
    bid_qty: np.ndarray
    ask_px: np.ndarray
    ask_qty: np.ndarray

    def __post_init__(self):
        for name in self._fields():
            arr = getattr(self, name)
            if arr.flags.writeable:
                arr = arr.copy()
                arr.flags.writeable = False
                object.__setattr__(self, name, arr)

    @staticmethod
    def _fields():
        return ("ts", "open", "high", "low", "close", "volume", "bid_px", "bid_qty", "ask_px", "ask_qty")

    def __len__(self) -> int:
        return len(self.ts)

    def __getitem__(self, i: int) -> MarketFrame:
        if isinstance(i, slice):
            return self.slice(*i.indices(len(self))[:2])
        return MarketFrame(
            timestamp=int(self.ts[i]),
            open=float(self.open[i]),
            high=float(self.high[i]),
            low=float(self.low[i]),
            close=float(self.close[i]),
            volume=float(self.volume[i]),
            bids=tuple((float(p), float(q)) for p, q in zip(self.bid_px[i], self.bid_qty[i])),
            asks=tuple((float(p), float(q)) for p, q in zip(self.ask_px[i], self.ask_qty[i])),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, MarketSeries):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in self._fields())

    def slice(self, start: int, stop: int) -> MarketSeries:
        return MarketSeries(*(getattr(self, f)[start:stop] for f in self._fields()))

    @classmethod
    def from_frames(cls, frames, validate: bool = True) -> MarketSeries:
        frames = list(frames)
        series = cls(
            ts=np.array([f.timestamp for f in frames], dtype=np.int64),
            open=np.array([f.open for f in frames], dtype=float),
            high=np.array([f.high for f in frames], dtype=float),
            low=np.array([f.low for f in frames], dtype=float),
            close=np.array([f.close for f in frames], dtype=float),
            volume=np.array([f.volume for f in frames], dtype=float),
            bid_px=np.array([[p for p, _ in f.bids] for f in frames], dtype=float).reshape(-1, LEVELS),
            bid_qty=np.array([[q for _, q in f.bids] for f in frames], dtype=float).reshape(-1, LEVELS),
            ask_px=np.array([[p for p, _ in f.asks] for f in frames], dtype=float).reshape(-1, LEVELS),
            ask_qty=np.array([[q for _, q in f.asks] for f in frames], dtype=float).reshape(-1, LEVELS),
        )
        if validate:
            validate_series(series)
        return series

    def frames(self):
        for i in range(len(self)):
            yield self[i]


@dataclass(frozen=True)
class SplitSpec:
    """Half-open timestamp ranges ``[start, end)`` for train/validation/test."""

    train: tuple[int, int]
    validation: tuple[int, int]
    test: tuple[int, int]

    def __post_init__(self):
        ranges = [self.train, self.validation, self.test]
        for lo, hi in ranges:
            if hi < lo:
                raise ValueError(f"range ({lo}, {hi}) has end before start")
        if not (self.train[1] <= self.validation[0] and self.validation[1] <= self.test[0]):
            raise ValueError("split ranges must be ordered train < validation < test and non-overlapping")

    @classmethod
    def by_fraction(cls, series: MarketSeries, train: float, validation: float) -> SplitSpec:
        n = len(series)
        a = int(round(n * train))
        b = int(round(n * (train + validation)))
        ts = series.ts
        end = int(ts[-1]) + 1

        def at(i):
            return int(ts[i]) if i < n else end

        return cls((at(0), at(a)), (at(a), at(b)), (at(b), end))


def _frame_violations(s: MarketSeries) -> list[tuple[int, str]]:
    """(row, invariant) pairs for every row breaking a frame invariant (first per row)."""
    n = len(s)
    checks = [
        ("non-finite value", ~np.isfinite(np.column_stack(
            [s.open, s.high, s.low, s.close, s.volume, s.bid_px, s.bid_qty, s.ask_px, s.ask_qty])).any(axis=1)),
        ("prices must be > 0", (np.column_stack([s.open, s.high, s.low, s.close, s.bid_px, s.ask_px]) <= 0).any(axis=1)),
        ("quantities must be >= 0", (np.column_stack([s.volume, s.bid_qty, s.ask_qty]) < 0).any(axis=1)),
        ("low > min(open, close)", s.low > np.minimum(s.open, s.close)),
        ("high < max(open, close)", s.high < np.maximum(s.open, s.close)),
        ("bid prices not strictly decreasing", (np.diff(s.bid_px, axis=1) >= 0).any(axis=1)),
        ("ask prices not strictly increasing", (np.diff(s.ask_px, axis=1) <= 0).any(axis=1)),
        ("best ask below best bid", s.ask_px[:, 0] < s.bid_px[:, 0]),
    ]
    out = {}
    for name, mask in checks:
        for row in np.flatnonzero(mask[:n]):
            out.setdefault(int(row), name)
    return sorted(out.items())


def validate_series(s: MarketSeries) -> None:
    ts = s.ts
    if len(ts) > 1:
        d = np.diff(ts)
        dup = np.flatnonzero(d <= 0)
        if dup.size:
            i = int(dup[0]) + 1
            raise NonMonotonicTimestamps(
                f"timestamp {int(ts[i])} at row {i} does not increase", row=i, timestamp=int(ts[i]))
        gap = np.flatnonzero(d != 1)
        if gap.size:
            i = int(gap[0])
            missing = int(ts[i]) + 1
            raise GapInSeries(f"missing minute {missing} after row {i}", row=i + 1, missing_timestamp=missing)
    bad = _frame_violations(s)
    if bad:
        row, what = bad[0]
        raise InvalidFrame(f"row {row} (ts={int(ts[row])}): {what}", row=row, timestamp=int(ts[row]), invariant=what)


def load_csv(path) -> MarketSeries:
    """Read the fixed-schema CSV, sort by timestamp and validate every invariant."""
    df = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in COLUMNS if c not in df.columns]
    if missing:
        raise MissingColumn(f"missing columns: {', '.join(missing)}", columns=missing)
    if not np.issubdtype(df["ts"].dtype, np.integer):
        raise InvalidFrame("ts column must hold integer epoch minutes", row=0, invariant="integer timestamps")
    df = df.sort_values("ts", kind="stable").reset_index(drop=True)
    series = MarketSeries(
        ts=df["ts"].to_numpy(np.int64),
        open=df["open"].to_numpy(float),
        high=df["high"].to_numpy(float),
        low=df["low"].to_numpy(float),
        close=df["close"].to_numpy(float),
        volume=df["volume"].to_numpy(float),
        bid_px=df[BID_PX].to_numpy(float),
        bid_qty=df[BID_QTY].to_numpy(float),
        ask_px=df[ASK_PX].to_numpy(float),
        ask_qty=df[ASK_QTY].to_numpy(float),
    )
    validate_series(series)
    return series


def write_csv(series: MarketSeries, path) -> None:
    """Write in the fixed schema; floats use the shortest round-trip repr."""
    cols = [series.open, series.high, series.low, series.close, series.volume]
    block = np.column_stack(cols + [series.bid_px, series.bid_qty, series.ask_px, series.ask_qty])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for t, row in zip(series.ts.tolist(), block.tolist()):
            w.writerow([t] + [repr(x) for x in row])


def split_indices(series: MarketSeries, spec: SplitSpec) -> tuple[tuple[int, int], ...]:
    """Index ranges ``[i, j)`` for each split range (timestamps mapped to row indices)."""
    if len(series) == 0:
        raise RangeOutOfBounds("empty series")
    first, last = int(series.ts[0]), int(series.ts[-1])
    out = []
    for name, (lo, hi) in zip(("train", "validation", "test"), (spec.train, spec.validation, spec.test)):
        if lo == hi:
            i = int(np.clip(lo - first, 0, len(series)))
            out.append((i, i))
            continue
        if lo < first or hi > last + 1:
            raise RangeOutOfBounds(f"{name} range [{lo}, {hi}) outside series [{first}, {last + 1})",
                                   range=name)
        out.append((lo - first, hi - first))
    return tuple(out)


def split(series: MarketSeries, spec: SplitSpec) -> tuple[MarketSeries, MarketSeries, MarketSeries]:
    return tuple(series.slice(i, j) for i, j in split_indices(series, spec))


def window(series: MarketSeries, end_index: int, length: int) -> MarketSeries:
    """Frames ``[end_index - length + 1, end_index]`` inclusive."""
    start = end_index - length + 1
    if start < 0 or end_index >= len(series):
        raise InsufficientHistory(
            f"window of {length} ending at {end_index} needs index {start} >= 0",
            end_index=end_index, length=length)
    return series.slice(start, end_index + 1)
