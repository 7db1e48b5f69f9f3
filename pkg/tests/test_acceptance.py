"""Acceptance suite: one test per criterion, each printing a pass/fail line."""

from __future__ import annotations

import json
import time

import numpy as np
import pytest

from conftest import random_frame
from oracles import context_row, indicator_row, metric_row, rel_close
from hftmix.backtest import buy_and_hold_policy, metrics, run
from hftmix.cli import main
from hftmix.dataset import TradingData
from hftmix.decomposition import ChunkLabel, assign, build_subsets, chunk_series, decompose
from hftmix.env import EnvConfig, TradingEnv, episode
from hftmix.hyper_agent import (
    HyperAgent,
    HyperBatch,
    HyperConfig,
    evaluate_range,
    pool_q_table,
    scaled_context,
    train_hyper,
)
from hftmix.indicators import CONTEXT_NAMES, SINGLE_NAMES, context_features, single_features
from hftmix.manifest import sha256_file
from hftmix.market_data import MarketSeries
from hftmix.memory import EpisodicMemory, MemoryConfig
from hftmix.neural import grad_check
from hftmix.optimal_q import brute_force_q, dp_optimal_q
from hftmix.selfcheck import GRAD_STEPS, perturb, random_hyper_batch, random_sub_batch
from hftmix.sub_agent import SubAgent, SubAgentConfig, episode_start, greedy_rollout, train
from hftmix.synth import sawtooth_closes, series_from_closes, two_regime_closes


def test_criterion_01_dp_oracle(criterion):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        T = int(rng.integers(2, 13))
        closes = 100 + np.cumsum(rng.standard_normal(T))
        cfg = EnvConfig(fee_rate=float(rng.uniform(0, 0.001)))
        g = float(rng.choice([0.0, 0.9, 1.0]))
        worst = max(worst, float(np.max(np.abs(dp_optimal_q(closes, cfg, g).q - brute_force_q(closes, cfg, g).q))))
    dt = time.perf_counter() - t0
    criterion(1, "DP equals brute force on 200 segments", worst <= 1e-9 and dt < 10,
              f"max abs err {worst:.1e}, {dt:.1f}s")


def test_criterion_02_gradients(criterion):
    t0 = time.perf_counter()
    worst_sub = worst_hyper = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        sub = SubAgent(33, 17, SubAgentConfig(seed=seed))
        perturb(sub.target, rng)
        b = random_sub_batch(sub, 8, rng)
        rep = grad_check(sub.online.parameters(), lambda bw: sub.loss(b, backward=bw), h=GRAD_STEPS, max_entries=8,
                         seed=seed)
        worst_sub = max(worst_sub, rep.max_rel_error)
        hyper = HyperAgent(50, 6, HyperConfig(seed=seed, beta=1.0))
        perturb(hyper.target, rng)
        hb = random_hyper_batch(hyper, 8, rng)
        rep = grad_check(hyper.online.parameters(), lambda bw: hyper.loss(hb, backward=bw), h=GRAD_STEPS,
                         max_entries=8, seed=seed)
        worst_hyper = max(worst_hyper, rep.max_rel_error)
    dt = time.perf_counter() - t0

    # negative control: a backward pass that drops the memory term must be caught
    def broken(bw):
        loss = hyper.loss(hb, backward=bw)
        if bw:
            hyper.online.zero_grad()
            hyper.loss(HyperBatch(**{**hb.__dict__, "q_memory": None}), backward=True)
        return loss

    caught = not grad_check(hyper.online.parameters(), broken, h=GRAD_STEPS, max_entries=8).passed
    criterion(2, "finite-difference gradient checks", max(worst_sub, worst_hyper) < 1e-4 and dt < 60 and caught,
              f"sub {worst_sub:.1e}, hyper {worst_hyper:.1e}, corrupted backward caught {caught}, {dt:.1f}s")


def test_criterion_03_accounting(criterion):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(62, 300))
        closes = 100 * np.exp(np.cumsum(rng.normal(0, 0.002, n)))
        env = TradingEnv(closes, EnvConfig(fee_rate=float(rng.uniform(0, 0.001)), m_size=float(rng.uniform(0.1, 5))))
        acts = rng.integers(0, 2, n)
        trans, v0, v1 = episode(env, 59, lambda t, p: int(acts[t]), initial_position=int(rng.integers(2)))
        worst = max(worst, abs(sum(tr.reward for tr in trans) - (v1 - v0)))
    criterion(3, "sum of rewards equals net-value change", worst <= 1e-9, f"max abs gap {worst:.1e}")


def test_criterion_04_indicator_oracle(criterion):
    rng = np.random.default_rng(4)
    worst = 0.0
    ok = True

    def check(got, want):
        nonlocal worst, ok
        err = abs(got - want) / max(abs(want), abs(got), 1e-300) if got != want else 0.0
        # trend features near zero are compared absolutely: relative error is meaningless there
        passed = rel_close(got, want, 1e-12) or abs(got - want) < 1e-12
        ok = ok and passed
        if abs(want) > 1e-6:
            worst = max(worst, err)

    for i in range(100):
        f = random_frame(rng, i)
        got, want = single_features(f), indicator_row(f)
        for j, name in enumerate(SINGLE_NAMES):
            check(got[j], want[name])
        frames = [random_frame(rng, 1000 + k) for k in range(60)]
        got = context_features(MarketSeries.from_frames(frames, validate=False))
        want = context_row(frames)
        for j, name in enumerate(CONTEXT_NAMES):
            check(got[j], want[name])
    criterion(4, "indicators match straight-line oracle on 100 frames and windows", ok,
              f"max rel err {worst:.1e}")


FIXED_SERIES = [
    [100.0, 101.0, 100.0],
    [100.0] * 6,
    [100.0, 110.0],
    [100.0, 101.0, 102.0, 103.5],           # no drawdown, no negative return
    [100.0, 102.0, 101.0, 103.0],           # a single negative return
    [100.0, 95.0, 97.0, 90.0, 99.0, 105.0],
    [50.0, 49.0, 48.0, 47.0],
    [1000.0, 1001.0, 999.5, 1002.25, 1000.0, 998.0, 1003.0],
    list(100 * np.cumprod(1 + np.random.default_rng(5).normal(0, 0.01, 300))),
    list(100 * np.cumprod(1 + np.random.default_rng(6).normal(1e-4, 0.002, 1000))),
]


def test_criterion_05_metric_oracle(criterion):
    ok, worst, absent = True, 0.0, 0
    for v in FIXED_SERIES:
        ours, ref = metrics(v), metric_row(v)
        for k, r in ref.items():
            if r is None or ours[k] is None:
                ok = ok and r is None and ours[k] is None
                absent += 1
                continue
            ok = ok and rel_close(ours[k], r, 1e-9)
            if r != 0:
                worst = max(worst, abs(ours[k] - r) / abs(r))
    hand = metrics(FIXED_SERIES[0])
    ok = ok and abs(hand["TR"]) < 1e-15 and abs(hand["MDD"] - 1 / 101) < 1e-12
    ok = ok and metrics(FIXED_SERIES[2])["ASR"] is None and metrics(FIXED_SERIES[1])["AVOL"] == 0.0
    criterion(5, "metrics match hand oracle on 10 fixed series", ok,
              f"max rel err {worst:.1e}, {absent} absent values agreed")


def _chunked_market(n_chunks, l_chunk, rng, drift_shift=0.0, vol_scale=1.0):
    drifts = rng.permutation(np.linspace(-4e-4, 4e-4, n_chunks)) + drift_shift
    vols = rng.permutation(np.linspace(1e-4, 1e-3, n_chunks)) * vol_scale
    logp = [np.cumsum(d + s * rng.standard_normal(l_chunk)) for d, s in zip(drifts, vols)]
    return np.concatenate([100 * np.exp(x - x[0]) for x in logp])


def test_criterion_06_decomposition_balance(criterion):
    rng = np.random.default_rng(6)
    closes = _chunked_market(99, 120, rng)
    chunks, labels, th = decompose(closes, 120)
    distinct = len({lb.slope for lb in labels}) == 99 and len({lb.volatility for lb in labels}) == 99
    subs = build_subsets(chunks, labels)
    sizes = {k: len(v) for k, v in subs.items()}
    balanced = all(s == 33 for s in sizes.values())
    val = _chunked_market(30, 120, rng, drift_shift=2e-3, vol_scale=10.0)
    _, vlabels, vth = decompose(val, 120, thresholds=th)
    reused = vth == th and all(lb.trend_class == "bull" and lb.vol_class == "volatile" for lb in vlabels)
    # refitting on the shifted set would have spread it over all three classes
    refit = [assign(ChunkLabel(lb.slope, lb.volatility), decompose(val, 120)[2]) for lb in vlabels]
    spread = len({lb.trend_class for lb in refit}) == 3
    criterion(6, "tercile sizes 33/33/33 and thresholds reused on validation",
              distinct and balanced and reused and spread, f"sizes {sorted(set(sizes.values()))}")


def test_criterion_07_memory(criterion):
    rng = np.random.default_rng(7)
    scan_ok = fifo_ok = weight_ok = True
    for _ in range(1000):
        m = int(rng.integers(1, 12))
        n = int(rng.integers(1, 80))
        cap = int(rng.integers(m, 64))
        mem = EpisodicMemory(4, MemoryConfig(cap, m, 1e-3, str(rng.choice(["proportional", "inverse"]))))
        keys = rng.integers(-2, 3, (n, 4)).astype(float)
        acts = rng.integers(0, 2, n)
        vals = rng.normal(size=n)
        for k, a, v in zip(keys, acts, vals):
            mem.add(k, int(a), float(v))
        live = list(range(max(0, n - cap), n))
        fifo_ok &= [e[0] for e in mem.entries()] == live
        q = rng.integers(-2, 3, 4).astype(float)
        scan = sorted((float(((keys[i] - q) ** 2).sum()) + 1e-3, i) for i in live)[:m]
        r = mem.lookup(q)
        scan_ok &= list(r.seq) == [i for _, i in scan] and list(r.distance) == [d for d, _ in scan]
        for a in (0, 1):
            w = mem.weights(r, a)
            if w is None:
                weight_ok &= not np.any(r.action == a)
                continue
            matched = r.value[r.action == a]
            qm = mem.aggregate(r, a)
            weight_ok &= abs(w.sum() - 1.0) <= 1e-12 and matched.min() - 1e-12 <= qm <= matched.max() + 1e-12
    criterion(7, "memory retrieval, FIFO and attention weights on 1000 trials", scan_ok and fifo_ok and weight_ok,
              f"scan {scan_ok}, fifo {fifo_ok}, weights {weight_ok}")


@pytest.mark.slow
def test_criterion_08_sub_agent_learning(criterion):
    t0 = time.perf_counter()
    n = 60 * 120
    closes = sawtooth_closes(n)
    data, _ = TradingData.build(series_from_closes(closes), fit_range=(0, n // 2))
    chunks = chunk_series(closes, 360)
    k = len(chunks)
    train_ch, val_ch, test_ch = chunks[:k // 2], chunks[k // 2:3 * k // 4], chunks[3 * k // 4:]
    env = EnvConfig(fee_rate=0.0)
    agent = SubAgent(data.n_single, data.n_context, SubAgentConfig(lr=1e-3, batch_size=64, seed=0), env)
    res = train(agent, data, train_ch, val_ch, epochs=15)
    got = best = 0.0
    for ch in test_ch:
        s, e = episode_start(ch), ch.end_index
        _, v0, v1 = greedy_rollout(agent.q_table(data, s, e + 1), data.closes, s, e, env)
        got += v1 - v0
        best += dp_optimal_q(data.closes[s:e + 1], env, gamma=1.0).value(0, 0)
    dt = time.perf_counter() - t0
    ratio = got / best
    criterion(8, "sub-agent reaches 95% of DP optimum on held-out sawtooth", ratio >= 0.95 and dt < 300,
              f"ratio {ratio:.3f}, best epoch {res.best_epoch}, {dt:.0f}s")


BLOCK = 240


@pytest.fixture(scope="module")
def mixture(tmp_path_factory):
    """Two regime sub-agents plus a hyper-agent trained over them."""
    t0 = time.perf_counter()
    tmp = tmp_path_factory.mktemp("mixture")
    n = BLOCK * 24
    closes = two_regime_closes(n, block=BLOCK, step=0.1, seed=3, noise=0.3)
    data, _ = TradingData.build(series_from_closes(closes), fit_range=(0, BLOCK * 12))
    env = EnvConfig(fee_rate=0.0)
    train_ch = chunk_series(closes, BLOCK)[:12]
    up = [c for c in train_ch if c.closes[-1] > c.closes[0]]
    down = [c for c in train_ch if c.closes[-1] < c.closes[0]]
    pool = []
    for i, subset in enumerate((up, down)):
        agent = SubAgent(data.n_single, data.n_context, SubAgentConfig(lr=1e-3, batch_size=64, seed=i), env)
        train(agent, data, subset, subset, epochs=3)
        pool.append(agent)
    paths = [tmp / f"sub{i}.ckpt" for i in range(2)]
    for agent, p in zip(pool, paths):
        agent.save(p)
    before = [sha256_file(p) for p in paths]
    qsub = pool_q_table(pool, data)
    hyper = HyperAgent(data.n_single + data.n_context, 2,
                       HyperConfig(lr=1e-3, batch_size=64, train_every=2, beta=1.0), env)
    hyper.attach_pool(pool, before)
    res = train_hyper(hyper, data, (0, BLOCK * 12 - 1), (BLOCK * 12, BLOCK * 18 - 1), qsub=qsub, epochs=15)
    for agent, p in zip(pool, paths):
        agent.save(p)
    after = [sha256_file(p) for p in paths]
    return {"data": data, "env": env, "pool": pool, "hyper": hyper, "qsub": qsub, "result": res,
            "before": before, "after": after, "seconds": time.perf_counter() - t0}


@pytest.mark.slow
def test_criterion_09_mixture_superiority(criterion, mixture):
    data, env, hyper, qsub = mixture["data"], mixture["env"], mixture["hyper"], mixture["qsub"]
    s, e = BLOCK * 18, len(data) - 1
    ctx = scaled_context(hyper, data.closes)
    r_hyper = evaluate_range(hyper, data, ctx, qsub, s, e)
    r_subs = []
    for agent in mixture["pool"]:
        _, v0, v1 = greedy_rollout(agent.q_table(data, s, e + 1), data.closes, s, e, env)
        r_subs.append((v1 - v0) / v0)
    r_bh = run(buy_and_hold_policy, data.closes, s, e, env).metrics["TR"]
    ok = r_hyper >= max(r_subs) and r_hyper >= r_bh and mixture["seconds"] < 600
    criterion(9, "hyper-agent beats best sub-agent and buy-and-hold on held-out regimes", ok,
              f"hyper {r_hyper:.4f}, subs {[round(float(x), 4) for x in r_subs]}, buy-and-hold {r_bh:.4f}, "
              f"{mixture['seconds']:.0f}s")


@pytest.mark.slow
def test_criterion_10_convexity_and_freezing(criterion, mixture):
    data, hyper, qsub = mixture["data"], mixture["hyper"], mixture["qsub"]
    ctx = scaled_context(hyper, data.closes)
    state = np.concatenate([data.s1, data.s2], axis=1)
    convex = True
    start = hyper.config.context_window - 1
    for t in range(start, len(data)):
        for pos in (0, 1):
            d = hyper.decide(state[t], ctx[t], pos, qsub[t, pos])
            convex &= bool(np.all(d.q_sub.min(0) - 1e-12 <= d.q_hyper) and np.all(d.q_hyper <= d.q_sub.max(0) + 1e-12))
    frozen = mixture["before"] == mixture["after"]
    criterion(10, "mixture Q inside sub-agent hull and pool frozen", convex and frozen,
              f"{2 * (len(data) - start)} decisions, checkpoints identical {frozen}")


def _pipeline(root, data):
    overrides = ["decomposition.l_chunk=360", "sub_agent.epochs=1", "sub_agent.batch_size=32",
                 "sub_agent.train_every=16", "hyper.epochs=1", "hyper.batch_size=32", "hyper.train_every=16"]
    for cmd in ("ingest", "label", "train-sub", "train-hyper", "backtest", "report"):
        args = [cmd, "--run-dir", str(root), "--set", f"data.path={data}"]
        for o in overrides:
            args += ["--set", o]
        assert main(args) == 0, cmd
    manifest = json.loads((root / "manifest.json").read_text())
    return manifest["artifacts"]


@pytest.mark.slow
def test_criterion_11_determinism(criterion, tmp_path):
    data = tmp_path / "data.csv"
    assert main(["synth-data", "--days", "6", "--seed", "11", "--out", str(data)]) == 0
    a = _pipeline(tmp_path / "a", data)
    b = _pipeline(tmp_path / "b", data)
    ckpts = [k for k in a if k.endswith(".ckpt")]
    reports = [k for k in a if k.startswith("report/") or k.startswith("backtest/")]
    ok = a == b and len(ckpts) == 7 and "report/report.json" in reports
    criterion(11, "two identical pipeline runs give identical hashes", ok,
              f"{len(a)} artifacts compared, {len(ckpts)} checkpoints")
