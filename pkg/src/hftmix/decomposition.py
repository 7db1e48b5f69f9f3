"""Market decomposition into trend and volatility regimes.

The training series is cut into fixed-length chunks. Each chunk gets a trend
score (OLS slope of the low-pass filtered, first-close-normalized closes) and
a volatility score (population std of raw one-minute simple returns). Tercile
cut points fitted on the training chunks label every chunk, including the
validation chunks, into one of three trend and one of three volatility
classes, which gives six overlapping training subsets.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import SeriesTooShort, TooFewChunks

log = logging.getLogger(__name__)

TREND_CLASSES = ("bear", "medium_trend", "bull")
VOL_CLASSES = ("stable", "medium_vol", "volatile")
SUBSET_NAMES = TREND_CLASSES + VOL_CLASSES


@dataclass(frozen=True)
class Chunk:
    start_index: int
    end_index: int  # inclusive
    closes: np.ndarray

    def __len__(self):
        return self.end_index - self.start_index + 1


@dataclass(frozen=True)
class ChunkLabel:
    slope: float
    volatility: float
    trend_class: str | None = None
    vol_class: str | None = None


@dataclass(frozen=True)
class TercileThresholds:
    slope_q33: float
    slope_q66: float
    vol_q33: float
    vol_q66: float

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> TercileThresholds:
        return cls(**{k: float(d[k]) for k in ("slope_q33", "slope_q66", "vol_q33", "vol_q66")})


def default_filter_window(l_chunk: int) -> int:
    return max(5, l_chunk // 20)


def chunk_series(closes, l_chunk: int, offset: int = 0) -> list[Chunk]:
    """Consecutive non-overlapping chunks; a trailing partial chunk is dropped.

    ``closes`` may be a price vector or anything with a ``close`` array;
    ``offset`` shifts the reported indices (e.g. to global series indices).
    """
    c = np.asarray(getattr(closes, "close", closes), dtype=float)
    n = len(c)
    if l_chunk < 2 or n < l_chunk:
        raise SeriesTooShort(f"series of length {n} is shorter than l_chunk={l_chunk}")
    return [Chunk(offset + k * l_chunk, offset + (k + 1) * l_chunk - 1, c[k * l_chunk:(k + 1) * l_chunk])
            for k in range(n // l_chunk)]


def _centered_mean(x: np.ndarray, half: int) -> np.ndarray:
    n = x.shape[-1]
    i = np.arange(n)
    k = np.minimum(half, np.minimum(i, n - 1 - i))
    cs = np.concatenate([np.zeros(x.shape[:-1] + (1,)), np.cumsum(x, axis=-1)], axis=-1)
    return (cs[..., i + k + 1] - cs[..., i - k]) / (2 * k + 1)


def lowpass(closes, window: int = 5) -> np.ndarray:
    """Zero-phase smoother: a centered moving average applied twice.

    The averaging width is ``2 * (window // 2) + 1``; near the edges the
    window shrinks symmetrically, so linear segments pass through unchanged.
    Works along the last axis.
    """
    x = np.asarray(closes, dtype=float)
    half = max(window // 2, 0)
    if half == 0:
        return x.copy()
    return _centered_mean(_centered_mean(x, half), half)


def slope(smoothed) -> float:
    """OLS slope of ``smoothed / smoothed[0]`` against the minute index."""
    y = np.asarray(smoothed, dtype=float)
    if y.shape[-1] < 2:
        raise SeriesTooShort("slope needs at least 2 points")
    y = y / y[..., :1]
    t = np.arange(y.shape[-1], dtype=float)
    tc = t - t.mean()
    out = (y * tc).sum(axis=-1) / (tc * tc).sum()
    return float(out) if np.ndim(out) == 0 else out


def chunk_volatility(closes) -> float:
    """Population std of one-minute simple returns of the raw closes."""
    c = np.asarray(closes, dtype=float)
    if c.shape[-1] < 2:
        raise SeriesTooShort("volatility needs at least 2 points")
    r = c[..., 1:] / c[..., :-1] - 1.0
    out = r.std(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def label_chunk(chunk: Chunk | np.ndarray, filter_window: int) -> ChunkLabel:
    c = chunk.closes if isinstance(chunk, Chunk) else np.asarray(chunk, dtype=float)
    return ChunkLabel(slope=slope(lowpass(c, filter_window)), volatility=chunk_volatility(c))


def _cuts(values) -> tuple[float, float]:
    q33, q66 = np.quantile(np.asarray(values, dtype=float), [1 / 3, 2 / 3], method="linear")
    return float(q33), float(q66)


def fit_thresholds(labels) -> TercileThresholds:
    labels = list(labels)
    if len(labels) < 3:
        raise TooFewChunks(f"need at least 3 training chunks, got {len(labels)}")
    s33, s66 = _cuts([lb.slope for lb in labels])
    v33, v66 = _cuts([lb.volatility for lb in labels])
    return TercileThresholds(s33, s66, v33, v66)


def _classify(v: float, q33: float, q66: float, names) -> str:
    if q33 == q66 and v == q33:
        # every boundary collapses onto this value: call it the middle class
        return names[1]
    if v <= q33:
        return names[0]
    if v <= q66:
        return names[1]
    return names[2]


def assign(label: ChunkLabel, th: TercileThresholds) -> ChunkLabel:
    return replace(
        label,
        trend_class=_classify(label.slope, th.slope_q33, th.slope_q66, TREND_CLASSES),
        vol_class=_classify(label.volatility, th.vol_q33, th.vol_q66, VOL_CLASSES),
    )


def build_subsets(chunks, labels) -> dict[str, list[Chunk]]:
    """Six subsets keyed by class name; every chunk lands in one trend and one vol subset."""
    subsets: dict[str, list[Chunk]] = {name: [] for name in SUBSET_NAMES}
    for ch, lb in zip(chunks, labels):
        if lb.trend_class is None or lb.vol_class is None:
            raise ValueError("labels must be assigned before building subsets")
        subsets[lb.trend_class].append(ch)
        subsets[lb.vol_class].append(ch)
    for name, members in subsets.items():
        if not members:
            log.warning("EmptySubset: no chunks labeled %s", name)
    return subsets


def empty_subsets(subsets: dict) -> list[str]:
    return [k for k, v in subsets.items() if not v]


def decompose(closes, l_chunk: int, filter_window: int | None = None, offset: int = 0,
              thresholds: TercileThresholds | None = None):
    """Chunk, score and label a series. Fits thresholds unless given.

    Returns ``(chunks, labels, thresholds)``.
    """
    fw = filter_window or default_filter_window(l_chunk)
    chunks = chunk_series(closes, l_chunk, offset)
    raw = [label_chunk(ch, fw) for ch in chunks]
    th = thresholds or fit_thresholds(raw)
    return chunks, [assign(lb, th) for lb in raw], th


def write_labels_csv(path, chunks, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chunk_start", "chunk_end", "slope", "volatility", "trend_class", "vol_class"])
        for ch, lb in zip(chunks, labels):
            w.writerow([ch.start_index, ch.end_index, repr(lb.slope), repr(lb.volatility),
                        lb.trend_class, lb.vol_class])
