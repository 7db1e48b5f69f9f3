"""Straight-line reference implementations used as test oracles.

These are written independently of the package, one scalar at a time, from
the indicator table and the metric definitions.
"""

from __future__ import annotations

import math
import statistics


def indicator_row(f) -> dict:
    o, h, l, c = f.open, f.high, f.low, f.close
    bp = [p for p, _ in f.bids]
    bq = [q for _, q in f.bids]
    ap = [p for p, _ in f.asks]
    aq = [q for _, q in f.asks]
    rng = h - l

    def div(a, b):
        return a / b if b != 0 else 0.0

    out = {}
    out["max_oc"] = max(o, c)
    out["min_oc"] = min(o, c)
    out["kmid"] = c - o
    out["kmid2"] = div(c - o, rng)
    out["klen"] = h - l
    out["kup"] = h - out["max_oc"]
    out["kup2"] = div(h - out["max_oc"], rng)
    out["klow"] = div(out["min_oc"] - l, rng)
    out["klow2"] = div(out["min_oc"] - l, rng)
    out["ksft"] = 2 * c - h - l
    out["ksft2"] = div(2 * c - h - l, rng)
    vol = 0.0
    for i in range(5):
        vol += bq[i] + aq[i]
    out["volume"] = vol
    for i in range(5):
        out[f"bid_{i + 1}_size_n"] = div(bq[i], vol)
    for i in range(5):
        out[f"ask_{i + 1}_size_n"] = div(aq[i], vol)
    d1 = aq[0] + bq[0]
    d2 = aq[1] + bq[1]
    out["wap1"] = (aq[0] * bp[0] + bq[0] * ap[0]) / d1 if d1 else (bp[0] + ap[0]) / 2
    out["wap2"] = (aq[1] * bp[1] + bq[1] * ap[1]) / d2 if d2 else (bp[1] + ap[1]) / 2
    out["wap_balance"] = abs(out["wap1"] - out["wap2"])
    out["buy_spread"] = abs(bp[0] - bp[4])
    out["sell_spread"] = abs(ap[0] - ap[4])
    out["buy_volume"] = sum(bq)
    out["sell_volume"] = sum(aq)
    out["volume_imbalance"] = div(out["buy_volume"] - out["sell_volume"], out["buy_volume"] + out["sell_volume"])
    out["price_spread"] = 2 * (ap[0] - bp[0]) / (ap[0] + bp[0])
    out["sell_vwap"] = sum(out[f"ask_{i + 1}_size_n"] * ap[i] for i in range(5))
    out["buy_vwap"] = sum(out[f"bid_{i + 1}_size_n"] * bp[i] for i in range(5))
    return out


def context_row(frames) -> dict:
    """Context features at the last of 60 frames."""
    rows = [indicator_row(f) for f in frames]
    last, prev = frames[-1], frames[-2]
    out = {
        "log_return_bid_1_price": math.log(last.bids[0][0] / prev.bids[0][0]),
        "log_return_bid_2_price": math.log(last.bids[1][0] / prev.bids[1][0]),
        "log_return_ask_1_price": math.log(last.asks[0][0] / prev.asks[0][0]),
        "log_return_ask_2_price": math.log(last.asks[1][0] / prev.asks[1][0]),
        "log_return_wap1": math.log(rows[-1]["wap1"] / rows[-2]["wap1"]),
        "log_return_wap2": math.log(rows[-1]["wap2"] / rows[-2]["wap2"]),
    }
    series = {
        "ask_1_price": [f.asks[0][0] for f in frames],
        "ask_2_price": [f.asks[1][0] for f in frames],
        "bid_1_price": [f.bids[0][0] for f in frames],
        "bid_2_price": [f.bids[1][0] for f in frames],
    }
    for k in ("buy_spread", "sell_spread", "wap1", "wap2", "sell_vwap", "buy_vwap", "volume"):
        series[k] = [r[k] for r in rows]
    for k, ys in series.items():
        sd = max(statistics.pstdev(ys), 1e-8)
        out[f"{k}_trend"] = (ys[-1] - statistics.fmean(ys)) / sd
    return out


def metric_row(values) -> dict:
    """Performance metrics from a net-value list, written as plain loops."""
    m = 525600
    r = [(values[i + 1] - values[i]) / values[i] for i in range(len(values) - 1)]
    n = len(r)
    mean = sum(r) / n
    var = sum((x - mean) ** 2 for x in r) / n
    sd = math.sqrt(var)
    peak = values[0]
    mdd = 0.0
    for v in values:
        peak = max(peak, v)
        mdd = max(mdd, (peak - v) / peak)
    neg = [x for x in r if x < 0]
    if neg:
        nm = sum(neg) / len(neg)
        dd = math.sqrt(sum((x - nm) ** 2 for x in neg) / len(neg))
    else:
        dd = 0.0
    return {
        "TR": (values[-1] - values[0]) / values[0],
        "AVOL": sd * math.sqrt(m),
        "MDD": mdd,
        "ASR": mean / sd * math.sqrt(m) if sd > 0 else None,
        "ACR": mean / mdd * m if mdd > 0 else None,
        "ASoR": mean / dd * math.sqrt(m) if dd > 0 else None,
    }


def rel_close(a, b, tol) -> bool:
    return abs(a - b) <= tol * max(abs(a), abs(b), 1e-300) or a == b
