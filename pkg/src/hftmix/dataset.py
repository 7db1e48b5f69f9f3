"""Model-ready view of a series: closes, timestamps and normalized features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .indicators import FeatureTable, Normalizer
from .market_data import MarketSeries


@dataclass
class TradingData:
    closes: np.ndarray
    ts: np.ndarray
    s1: np.ndarray  # (n, n_single) normalized single features
    s2: np.ndarray  # (n, n_context) context features, log returns normalized

    def __len__(self):
        return len(self.closes)

    @property
    def n_single(self) -> int:
        return self.s1.shape[1]

    @property
    def n_context(self) -> int:
        return self.s2.shape[1]

    @classmethod
    def build(cls, series: MarketSeries, normalizer: Normalizer | None = None,
              fit_range: tuple[int, int] | None = None) -> tuple["TradingData", Normalizer]:
        """Compute features; fit the normalizer on ``fit_range`` unless one is given."""
        table = FeatureTable.from_series(series)
        if normalizer is None:
            lo, hi = fit_range if fit_range is not None else (0, len(series))
            normalizer = table.fit_normalizer(lo, hi)
        s1, s2 = table.normalized(normalizer)
        return cls(np.asarray(series.close, dtype=float), np.asarray(series.ts), s1, np.nan_to_num(s2)), normalizer
