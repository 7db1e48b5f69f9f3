"""Hyper-agent: learned softmax mixture over a frozen pool of sub-agents.

The network encodes the low-level state, conditions it on the backward-window
market context (slope, volatility) and the current position through the same
layer-norm scale/shift adapter used by the sub-agents, and emits one logit per
sub-agent. The mixture Q-value is the weighted sum of the frozen sub-agents'
Q-vectors, so gradients reach only the hyper network.

Sub-agent outputs never change during training, so they are evaluated once
for every (minute, position) pair and looked up from a table.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import TradingData
from .decomposition import chunk_volatility, default_filter_window, lowpass, slope
from .env import MIN_START, EnvConfig, TradingEnv
from .errors import EmptySeries, InsufficientHistory, InvalidEpochs, MissingOptimalQ, PoolIncomplete
from .memory import EpisodicMemory, MemoryConfig
from .neural import (
    Adam,
    Dense,
    Embedding,
    Module,
    layer_norm,
    layer_norm_backward,
    load_checkpoint,
    relu,
    relu_backward,
    round_to_checkpoint_precision,
    save_checkpoint,
    softmax,
)
from .optimal_q import dp_optimal_q
from .replay import ReplayBuffer
from .sub_agent import N_ACTIONS, epsilon_greedy, greedy_rollout, supervisor_kl

log = logging.getLogger(__name__)

DEFAULT_POOL_SIZE = 6


@dataclass
class HyperConfig:
    embed_dim: int = 32
    hidden_dim: int = 128
    context_window: int = 60
    lr: float = 1e-4
    alpha_h: float = 0.5
    beta: float = 1.0
    tau: float = 1.0
    kl_direction: str = "supervisor_forward"
    batch_size: int = 512
    buffer_capacity: int = 100_000
    target_sync: int = 100
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.3
    train_every: int = 1
    epochs: int = 15
    seed: int = 0


def high_context(closes, t: int, h_c: int = 60) -> tuple[float, float]:
    """(slope, volatility) of the ``h_c`` closes ending at ``t`` (inclusive)."""
    if t < h_c - 1:
        raise InsufficientHistory(f"t={t} needs {h_c - 1} minutes of history", t=t)
    c = np.asarray(closes, dtype=float)
    if t >= len(c):
        raise InsufficientHistory(f"t={t} beyond series of length {len(c)}")
    w = c[t - h_c + 1:t + 1]
    return slope(lowpass(w, default_filter_window(h_c))), chunk_volatility(w)


def high_context_matrix(closes, h_c: int = 60) -> np.ndarray:
    """Row t holds ``high_context(closes, t, h_c)``; rows before ``h_c - 1`` are NaN."""
    c = np.asarray(closes, dtype=float)
    out = np.full((len(c), 2), np.nan)
    if len(c) >= h_c:
        win = sliding_window_view(c, h_c)
        out[h_c - 1:, 0] = slope(lowpass(win, default_filter_window(h_c)))
        out[h_c - 1:, 1] = chunk_volatility(win)
    return out


@dataclass
class ContextScaler:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))

    @classmethod
    def fit(cls, ctx_rows) -> ContextScaler:
        x = np.asarray(ctx_rows, dtype=float)
        x = x[np.all(np.isfinite(x), axis=1)]
        if len(x) < 2:
            raise EmptySeries("not enough rows to fit context statistics")
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), 1e-12))


class HyperNet(Module):
    def __init__(self, n_state: int, n_agents: int, embed_dim: int = 32, hidden_dim: int = 128, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.n_agents = n_agents
        self.embed_dim = embed_dim
        self.enc = self.register(Dense("psi_enc", n_state, embed_dim, rng))
        self.cond = self.register(Dense("psi_ctx", 2, embed_dim, rng))
        self.pos = self.register(Embedding("psi_pos", 2, embed_dim, rng))
        self.psi_c = self.register(Dense("psi_c", embed_dim, 2 * embed_dim, rng))
        self.w1 = self.register(Dense("weight.0", embed_dim, hidden_dim, rng))
        self.w2 = self.register(Dense("weight.1", hidden_dim, n_agents, rng))

    def logits(self, state, ctx, pos):
        """Returns ``(logits, key, cache)``; ``key`` is the encoder output used for memory."""
        d = self.embed_dim
        k, ce = self.enc.forward(state)
        cc, cctx = self.cond.forward(ctx)
        pe, cp = self.pos.forward(pos)
        bg, cpc = self.psi_c.forward(cc + pe)
        scale, shift = bg[:, :d], bg[:, d:]
        n, cln = layer_norm(k)
        h = n * scale + shift
        z1, c1 = self.w1.forward(h)
        r1, m1 = relu(z1)
        logits, c2 = self.w2.forward(r1)
        return logits, k, (ce, cctx, cp, cpc, cln, n, scale, c1, m1, c2)

    def forward(self, state, ctx, pos, q_sub):
        """Mixture Q ``(B, 2)`` from frozen sub-agent Q-vectors ``q_sub (B, N, 2)``."""
        self.forward_calls += 1
        logits, key, cache = self.logits(state, ctx, pos)
        w = softmax(logits)
        q = np.einsum("bn,bna->ba", w, q_sub)
        return q, w, key, (cache, w, q_sub)

    def backward(self, dq, cache):
        inner, w, q_sub = cache
        ce, cctx, cp, cpc, cln, n, scale, c1, m1, c2 = inner
        dw = np.einsum("ba,bna->bn", dq, q_sub)
        dlogits = w * (dw - (w * dw).sum(axis=1, keepdims=True))
        dh = self.w1.backward(relu_backward(self.w2.backward(dlogits, c2), m1), c1)
        dc = self.psi_c.backward(np.concatenate([dh * n, dh], axis=1), cpc)
        self.cond.backward(dc, cctx)
        self.pos.backward(dc, cp)
        self.enc.backward(layer_norm_backward(dh * scale, cln), ce)


@dataclass(frozen=True)
class MixtureDecision:
    weights: np.ndarray   # (N,)
    q_sub: np.ndarray     # (N, 2)
    q_hyper: np.ndarray   # (2,)
    action: int


def check_convex(q_hyper, q_sub, atol: float = 1e-9) -> None:
    lo, hi = q_sub.min(axis=-2), q_sub.max(axis=-2)
    if np.any(q_hyper < lo - atol) or np.any(q_hyper > hi + atol):
        raise AssertionError("mixture Q outside the sub-agent hull")


def pool_q_table(pool, data: TradingData, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Frozen sub-agent outputs ``Q[t - start, P, i, a]``."""
    stop = len(data) if stop is None else stop
    tables = [agent.q_table(data, start, stop) for agent in pool]  # each (T, 2, 2)
    return np.stack(tables, axis=2)


@dataclass
class HyperBatch:
    state: np.ndarray
    ctx: np.ndarray
    pos: np.ndarray
    q_sub: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    state_next: np.ndarray
    ctx_next: np.ndarray
    pos_next: np.ndarray
    q_sub_next: np.ndarray
    done: np.ndarray
    p_star: np.ndarray | None
    q_memory: np.ndarray | None = None  # (B,) memory estimate, NaN when absent


class HyperAgent:
    def __init__(self, n_state: int, n_agents: int = DEFAULT_POOL_SIZE, config: HyperConfig = HyperConfig(),
                 env_config: EnvConfig = EnvConfig(), memory_config: MemoryConfig = MemoryConfig()):
        self.config = config
        self.env_config = env_config
        self.n_agents = n_agents
        c = config
        self.online = HyperNet(n_state, n_agents, c.embed_dim, c.hidden_dim, seed=c.seed)
        self.target = HyperNet(n_state, n_agents, c.embed_dim, c.hidden_dim, seed=c.seed)
        self.target.copy_from(self.online)
        self.optimizer = Adam(self.online.parameters(), lr=c.lr)
        self.buffer = ReplayBuffer(c.buffer_capacity, N_ACTIONS)
        self.memory = EpisodicMemory(c.embed_dim, memory_config)
        self.scaler: ContextScaler | None = None
        self.pool = None
        self.pool_hashes: list[str] = []
        self.grad_steps = 0

    def attach_pool(self, pool, hashes=None):
        pool = list(pool)
        if len(pool) != self.n_agents or any(p is None for p in pool):
            raise PoolIncomplete(f"expected {self.n_agents} sub-agents, got {sum(p is not None for p in pool)}")
        self.pool = pool
        self.pool_hashes = list(hashes or [])

    def sync_target(self):
        self.target.copy_from(self.online)

    # inputs
    def state_rows(self, data: TradingData, t):
        t = np.atleast_1d(t)
        return np.concatenate([data.s1[t], data.s2[t]], axis=1)

    def decide(self, state, ctx, position: int, q_sub) -> MixtureDecision:
        if self.pool is not None and len(self.pool) != self.n_agents:
            raise PoolIncomplete("pool size changed")
        q_sub = np.asarray(q_sub, dtype=float).reshape(1, self.n_agents, N_ACTIONS)
        q, w, _, _ = self.online.forward(np.atleast_2d(state), np.atleast_2d(ctx), [position], q_sub)
        check_convex(q[0], q_sub[0])
        return MixtureDecision(w[0], q_sub[0], q[0], int(np.argmax(q[0])))

    def loss(self, batch: HyperBatch, backward: bool = False) -> float:
        if batch.p_star is None:
            raise MissingOptimalQ("batch has no supervisor distribution")
        c = self.config
        q, _, _, cache = self.online.forward(batch.state, batch.ctx, batch.pos, batch.q_sub)
        qn_online = self.online.forward(batch.state_next, batch.ctx_next, batch.pos_next, batch.q_sub_next)[0]
        qn_target = self.target.forward(batch.state_next, batch.ctx_next, batch.pos_next, batch.q_sub_next)[0]
        B = len(batch.action)
        rows = np.arange(B)
        a_next = np.argmax(qn_online, axis=1)
        y = batch.reward + self.env_config.gamma * (~batch.done) * qn_target[rows, a_next]
        q_sa = q[rows, batch.action]
        td = y - q_sa
        kl, gkl = supervisor_kl(batch.p_star, q, c.tau, c.kl_direction)
        total = np.mean(td * td) + c.alpha_h * np.mean(kl)
        dq = c.alpha_h * gkl / B
        dq[rows, batch.action] += -2.0 * td / B
        if batch.q_memory is not None and c.beta != 0.0:
            present = np.isfinite(batch.q_memory)
            gap = np.where(present, q_sa - np.where(present, batch.q_memory, 0.0), 0.0)
            total += c.beta * np.sum(gap * gap) / B
            dq[rows, batch.action] += 2.0 * c.beta * gap / B
        if backward:
            self.online.backward(dq, cache)
        return float(total)

    def train_step(self, batch: HyperBatch) -> float:
        self.online.zero_grad()
        loss = self.loss(batch, backward=True)
        self.optimizer.step()
        self.grad_steps += 1
        if self.grad_steps % self.config.target_sync == 0:
            self.sync_target()
        return loss

    def q_table(self, data: TradingData, ctx: np.ndarray, qsub: np.ndarray, start: int, stop: int):
        """Mixture Q[t - start, P, a] and weights W[t - start, P, i] for t in [start, stop)."""
        n = stop - start
        t = np.arange(start, stop)
        state = np.concatenate([self.state_rows(data, t)] * 2)
        cx = np.concatenate([ctx[t]] * 2)
        pos = np.repeat([0, 1], n)
        qs = np.concatenate([qsub[t, 0], qsub[t, 1]])
        q, w, _, _ = self.online.forward(state, cx, pos, qs)
        check_convex(q, qs)
        return np.stack([q[:n], q[n:]], axis=1), np.stack([w[:n], w[n:]], axis=1)

    # persistence
    def manifest(self) -> dict:
        return {
            "kind": "hyper_agent",
            "n_state": self.online.enc.n_in,
            "n_agents": self.n_agents,
            "config": asdict(self.config),
            "env": asdict(self.env_config),
            "memory": asdict(self.memory.config),
            "context_scaler": self.scaler.to_dict() if self.scaler else None,
            "sub_agent_sha256": self.pool_hashes,
        }

    def save(self, path, extra: dict | None = None):
        save_checkpoint(path, self.online.parameters(), {**self.manifest(), **(extra or {})})

    @classmethod
    def load(cls, path) -> tuple[HyperAgent, dict]:
        header, tensors = load_checkpoint(path)
        agent = cls(header["n_state"], header["n_agents"], HyperConfig(**header["config"]),
                    EnvConfig(**header["env"]), MemoryConfig(**header["memory"]))
        agent.online.load_state(tensors)
        agent.sync_target()
        if header.get("context_scaler"):
            agent.scaler = ContextScaler.from_dict(header["context_scaler"])
        agent.pool_hashes = header.get("sub_agent_sha256", [])
        return agent, header


@dataclass
class HyperTrainResult:
    best_epoch: int
    best_score: float
    curve: list = field(default_factory=list)  # (epoch, val_return, mean_loss)
    env_steps: int = 0
    memory_inserts: int = 0


def scaled_context(agent: HyperAgent, closes) -> np.ndarray:
    raw = high_context_matrix(closes, agent.config.context_window)
    return np.nan_to_num(agent.scaler.apply(raw))


def evaluate_range(agent: HyperAgent, data, ctx, qsub, start: int, end: int) -> float:
    """Greedy return rate from flat over ``[start, end]``."""
    q, _ = agent.q_table(data, ctx, qsub, start, end + 1)
    _, v0, v1 = greedy_rollout(q, data.closes, start, end, agent.env_config)
    return (v1 - v0) / v0


def train_hyper(agent: HyperAgent, data: TradingData, train_range: tuple[int, int], val_range: tuple[int, int],
                epochs: int | None = None, qsub: np.ndarray | None = None, progress=None) -> HyperTrainResult:
    """Phase-II training over the training range as one episode per epoch.

    ``train_range``/``val_range`` are inclusive ``(first, last)`` minute indices.
    ``qsub`` defaults to the attached pool's outputs over all of ``data``.
    """
    c = agent.config
    epochs = c.epochs if epochs is None else epochs
    if epochs < 1:
        raise InvalidEpochs(f"epochs must be >= 1, got {epochs}")
    lo, hi = max(train_range[0], MIN_START, c.context_window - 1), train_range[1]
    if hi <= lo:
        raise EmptySeries(f"training range {train_range} has no steps")
    vlo, vhi = max(val_range[0], MIN_START, c.context_window - 1), val_range[1]
    if qsub is None:
        if agent.pool is None:
            raise PoolIncomplete("no sub-agent pool attached")
        qsub = pool_q_table(agent.pool, data)
    if qsub.shape[2] != agent.n_agents:
        raise PoolIncomplete(f"Q table has {qsub.shape[2]} agents, expected {agent.n_agents}")

    raw_ctx = high_context_matrix(data.closes, c.context_window)
    if agent.scaler is None:
        agent.scaler = ContextScaler.fit(raw_ctx[lo:hi + 1])
    ctx = np.nan_to_num(agent.scaler.apply(raw_ctx))
    probs = dp_optimal_q(data.closes[lo:hi + 1], agent.env_config).supervisor(c.tau)
    state_all = np.concatenate([data.s1, data.s2], axis=1)

    rng = np.random.default_rng(c.seed + 104729)
    steps_per_epoch = hi - lo
    decay = max(1, int(c.eps_fraction * epochs * steps_per_epoch))
    env = TradingEnv(data.closes, agent.env_config, end=hi)
    gamma = agent.env_config.gamma
    result = HyperTrainResult(-1, float("nan"))
    best_score, best_state = -np.inf, None

    for epoch in range(1, epochs + 1):
        losses = []
        state = env.reset(lo, 0)
        while not state.done:
            t, pos = state.t, state.position
            q, _, key, _ = agent.online.forward(state_all[t:t + 1], ctx[t:t + 1], [pos], qsub[t:t + 1, pos])
            frac = min(1.0, result.env_steps / decay)
            eps = c.eps_start + frac * (c.eps_end - c.eps_start)
            a = epsilon_greedy(q[0], eps, rng)
            nxt, r, _ = env.step(state, a)
            nt = nxt.t
            qn = agent.online.forward(state_all[nt:nt + 1], ctx[nt:nt + 1], [a], qsub[nt:nt + 1, a])[0]
            value = r + (0.0 if nxt.done else gamma * float(qn[0].max()))
            agent.memory.add(key[0], a, value, t=t, position=pos)
            agent.buffer.add(t, pos, a, r, nt, nxt.done, probs[t - lo, pos])
            result.env_steps += 1
            result.memory_inserts += 1
            state = nxt
            if len(agent.buffer) >= min(c.batch_size, steps_per_epoch) and result.env_steps % c.train_every == 0:
                idx = agent.buffer.sample_indices(c.batch_size, rng)
                losses.append(agent.train_step(_batch(agent, idx, state_all, ctx, qsub)))
        score = evaluate_range(agent, data, ctx, qsub, vlo, vhi)
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        result.curve.append((epoch, score, mean_loss))
        if progress:
            progress(epoch, score, mean_loss)
        if score > best_score:
            best_score, result.best_epoch, best_state = score, epoch, agent.online.state()
    agent.online.load_state(best_state)
    round_to_checkpoint_precision(agent.online)
    agent.sync_target()
    result.best_score = float(best_score)
    return result


def _batch(agent: HyperAgent, idx, state_all, ctx, qsub) -> HyperBatch:
    buf = agent.buffer
    t, nt, pos, a = buf.t[idx], buf.next_t[idx], buf.position[idx], buf.action[idx]
    state = state_all[t]
    _, key, _ = agent.online.logits(state, ctx[t], pos)
    q_m, present = agent.memory.query_batch(key, a)
    return HyperBatch(state, ctx[t], pos, qsub[t, pos], a, buf.reward[idx], state_all[nt], ctx[nt], a,
                      qsub[nt, a], buf.done[idx], buf.p_star[idx], np.where(present, q_m, np.nan))


def write_weight_log(path, timestamps, weights, actions) -> None:
    """``ts,w1..wN,action`` per decision."""
    weights = np.asarray(weights)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ts"] + [f"w{i + 1}" for i in range(weights.shape[1])] + ["action"])
        for ts, row, a in zip(timestamps, weights, actions):
            w.writerow([int(ts)] + [repr(float(x)) for x in row] + [int(a)])
