from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hftmix.market_data import LEVELS, MarketFrame
from hftmix.synth import series_from_closes

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_frame(ts=0, o=100.0, h=101.0, l=99.0, c=100.5, v=5.0, bid1=99.9, ask1=100.1, tick=0.1,
               bid_qty=None, ask_qty=None) -> MarketFrame:
    bq = bid_qty if bid_qty is not None else [1.0] * LEVELS
    aq = ask_qty if ask_qty is not None else [1.0] * LEVELS
    bids = tuple((bid1 - i * tick, float(bq[i])) for i in range(LEVELS))
    asks = tuple((ask1 + i * tick, float(aq[i])) for i in range(LEVELS))
    return MarketFrame(ts, o, h, l, c, v, bids, asks)


def random_frame(rng: np.random.Generator, ts: int = 0) -> MarketFrame:
    c = float(rng.uniform(50, 150))
    o = float(c * (1 + rng.normal(0, 0.003)))
    h = max(o, c) * (1 + float(rng.uniform(0, 0.003)))
    low = min(o, c) * (1 - float(rng.uniform(0, 0.003)))
    mid = c
    half = mid * float(rng.uniform(1e-5, 1e-3))
    tick = mid * float(rng.uniform(1e-5, 1e-3))
    return make_frame(ts, o, h, low, c, float(rng.uniform(0, 50)), mid - half, mid + half, tick,
                      rng.uniform(0, 10, LEVELS).tolist(), rng.uniform(0, 10, LEVELS).tolist())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_series():
    closes = 100 + np.cumsum(np.random.default_rng(3).normal(0, 0.05, 300))
    return series_from_closes(closes, seed=4)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request):
    """``criterion(n, title, passed, detail)`` prints and records one pass/fail line, then asserts."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(number: int, title: str, passed: bool, detail: str = ""):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        lines.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
