"""Regime sub-agents: dueling double-DQN with a conditional adapter.

Network
    h_s = psi1(s1)                      single-state encoder
    c   = psi3[P] + psi2(s2)            context encoder plus position embedding
    (scale, shift) = psi_c(c)
    h   = layer_norm(h_s) * scale + shift
    Q(h, a) = V(h) + Adv(h, a) - mean_a' Adv(h, a')

Loss per transition: squared double-DQN TD error plus ``alpha_l`` times the
KL between the supervisor distribution softmax(Q*/tau) from the DP table and
softmax(Q/tau).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import TradingData
from .decomposition import Chunk
from .env import MIN_START, EnvConfig, TradingEnv
from .errors import EmptySubset, InvalidEpochs, MissingOptimalQ
from .neural import (
    Adam,
    Dense,
    Embedding,
    Module,
    kl_from_logits,
    kl_to_logits,
    layer_norm,
    layer_norm_backward,
    load_checkpoint,
    relu,
    relu_backward,
    round_to_checkpoint_precision,
    save_checkpoint,
)
from .optimal_q import OptimalQTable, dp_optimal_q
from .replay import ReplayBuffer

log = logging.getLogger(__name__)

N_ACTIONS = 2


@dataclass
class SubAgentConfig:
    embed_dim: int = 64
    hidden_dim: int = 128
    lr: float = 1e-4
    alpha_l: float = 1.0
    tau: float = 1.0
    kl_direction: str = "supervisor_forward"  # or "agent_forward"
    batch_size: int = 512
    buffer_capacity: int = 100_000
    target_sync: int = 100
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.3
    train_every: int = 1
    epochs: int = 15
    seed: int = 0


class DuelingAdapterNet(Module):
    def __init__(self, n_single: int, n_context: int, embed_dim: int = 64, hidden_dim: int = 128,
                 seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.embed_dim = embed_dim
        self.psi1 = self.register(Dense("psi1", n_single, embed_dim, rng))
        self.psi2 = self.register(Dense("psi2", n_context, embed_dim, rng))
        self.psi3 = self.register(Embedding("psi3", 2, embed_dim, rng))
        self.psi_c = self.register(Dense("psi_c", embed_dim, 2 * embed_dim, rng))
        self.v1 = self.register(Dense("value.0", embed_dim, hidden_dim, rng))
        self.v2 = self.register(Dense("value.1", hidden_dim, 1, rng))
        self.a1 = self.register(Dense("adv.0", embed_dim, hidden_dim, rng))
        self.a2 = self.register(Dense("adv.1", hidden_dim, N_ACTIONS, rng))

    # pieces, exposed separately so they can be probed in isolation
    def encode(self, s1, s2, pos):
        h_s, c1 = self.psi1.forward(s1)
        ctx, c2 = self.psi2.forward(s2)
        emb, c3 = self.psi3.forward(pos)
        return h_s, emb + ctx, (c1, c2, c3)

    def adapt(self, h_s, c):
        d = self.embed_dim
        bg, cc = self.psi_c.forward(c)
        scale, shift = bg[:, :d], bg[:, d:]
        n, cn = layer_norm(h_s)
        return n * scale + shift, (cc, cn, n, scale)

    def heads(self, h):
        zv, cv1 = self.v1.forward(h)
        rv, mv = relu(zv)
        v, cv2 = self.v2.forward(rv)
        za, ca1 = self.a1.forward(h)
        ra, ma = relu(za)
        adv, ca2 = self.a2.forward(ra)
        q = v + adv - adv.mean(axis=1, keepdims=True)
        return q, (cv1, mv, cv2, ca1, ma, ca2), v, adv

    def forward(self, s1, s2, pos):
        self.forward_calls += 1
        h_s, c, enc_cache = self.encode(s1, s2, pos)
        h, ad_cache = self.adapt(h_s, c)
        q, head_cache, _, _ = self.heads(h)
        return q, (enc_cache, ad_cache, head_cache)

    def backward(self, dq, cache):
        enc_cache, ad_cache, head_cache = cache
        cv1, mv, cv2, ca1, ma, ca2 = head_cache
        dv = dq.sum(axis=1, keepdims=True)
        dadv = dq - dq.mean(axis=1, keepdims=True)
        dh = self.v1.backward(relu_backward(self.v2.backward(dv, cv2), mv), cv1)
        dh = dh + self.a1.backward(relu_backward(self.a2.backward(dadv, ca2), ma), ca1)
        cc, cn, n, scale = ad_cache
        d = self.embed_dim
        dbg = np.concatenate([dh * n, dh], axis=1)
        dc = self.psi_c.backward(dbg, cc)
        dh_s = layer_norm_backward(dh * scale, cn)
        c1, c2, c3 = enc_cache
        self.psi1.backward(dh_s, c1)
        self.psi2.backward(dc, c2)
        self.psi3.backward(dc, c3)

    def q_values(self, s1, s2, pos):
        return self.forward(s1, s2, pos)[0]


def epsilon_greedy(q_row, eps: float, rng: np.random.Generator) -> int:
    """Uniform random action with probability ``eps``, else argmax (ties -> 0)."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must be in [0, 1]")
    if eps > 0.0 and rng.random() < eps:
        return int(rng.integers(N_ACTIONS))
    return int(np.argmax(q_row))


@dataclass
class Batch:
    s1: np.ndarray
    s2: np.ndarray
    pos: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    s1_next: np.ndarray
    s2_next: np.ndarray
    pos_next: np.ndarray
    done: np.ndarray
    p_star: np.ndarray | None

    @classmethod
    def from_buffer(cls, buf: ReplayBuffer, idx: np.ndarray, data: TradingData) -> Batch:
        t, nt = buf.t[idx], buf.next_t[idx]
        return cls(data.s1[t], data.s2[t], buf.position[idx], buf.action[idx], buf.reward[idx],
                   data.s1[nt], data.s2[nt], buf.action[idx], buf.done[idx], buf.p_star[idx])


def supervisor_kl(p_star, q, tau: float, direction: str):
    if direction == "supervisor_forward":
        return kl_to_logits(p_star, q, tau)
    if direction == "agent_forward":
        return kl_from_logits(q, p_star, tau)
    raise ValueError(f"unknown kl_direction {direction!r}")


class SubAgent:
    def __init__(self, n_single: int, n_context: int, config: SubAgentConfig = SubAgentConfig(),
                 env_config: EnvConfig = EnvConfig(), label: str = ""):
        self.config = config
        self.env_config = env_config
        self.label = label
        c = config
        self.online = DuelingAdapterNet(n_single, n_context, c.embed_dim, c.hidden_dim, seed=c.seed)
        self.target = DuelingAdapterNet(n_single, n_context, c.embed_dim, c.hidden_dim, seed=c.seed)
        self.target.copy_from(self.online)
        self.optimizer = Adam(self.online.parameters(), lr=c.lr)
        self.buffer = ReplayBuffer(c.buffer_capacity, N_ACTIONS)
        self.grad_steps = 0

    @property
    def n_single(self):
        return self.online.psi1.n_in

    @property
    def n_context(self):
        return self.online.psi2.n_in

    def sync_target(self):
        self.target.copy_from(self.online)

    def act(self, s1, s2, position: int, eps: float, rng: np.random.Generator) -> int:
        q = self.online.q_values(np.atleast_2d(s1), np.atleast_2d(s2), [position])[0]
        return epsilon_greedy(q, eps, rng)

    def q_table(self, data: TradingData, start: int, stop: int) -> np.ndarray:
        """Online Q[t - start, P, a] for t in [start, stop) and both positions."""
        n = stop - start
        s1 = np.concatenate([data.s1[start:stop]] * 2)
        s2 = np.concatenate([data.s2[start:stop]] * 2)
        pos = np.repeat([0, 1], n)
        q = self.online.q_values(s1, s2, pos)
        return np.stack([q[:n], q[n:]], axis=1)

    def loss(self, batch: Batch, backward: bool = False) -> float:
        """TD + supervisor loss averaged over the batch; optionally fills gradients."""
        if batch.p_star is None:
            raise MissingOptimalQ("batch has no supervisor distribution")
        c = self.config
        gamma = self.env_config.gamma
        q, cache = self.online.forward(batch.s1, batch.s2, batch.pos)
        q_next_online = self.online.forward(batch.s1_next, batch.s2_next, batch.pos_next)[0]
        q_next_target = self.target.forward(batch.s1_next, batch.s2_next, batch.pos_next)[0]
        B = len(batch.action)
        rows = np.arange(B)
        a_next = np.argmax(q_next_online, axis=1)
        y = batch.reward + gamma * (~batch.done) * q_next_target[rows, a_next]
        td = y - q[rows, batch.action]
        kl, gkl = supervisor_kl(batch.p_star, q, c.tau, c.kl_direction)
        loss = float(np.mean(td * td) + c.alpha_l * np.mean(kl))
        if backward:
            dq = c.alpha_l * gkl / B
            dq[rows, batch.action] += -2.0 * td / B
            self.online.backward(dq, cache)
        return loss

    def train_step(self, batch: Batch) -> float:
        self.online.zero_grad()
        loss = self.loss(batch, backward=True)
        self.optimizer.step()
        self.grad_steps += 1
        if self.grad_steps % self.config.target_sync == 0:
            self.sync_target()
        return loss

    # persistence
    def manifest(self) -> dict:
        return {
            "kind": "sub_agent",
            "label": self.label,
            "n_single": self.n_single,
            "n_context": self.n_context,
            "config": asdict(self.config),
            "env": asdict(self.env_config),
        }

    def save(self, path, extra: dict | None = None):
        save_checkpoint(path, self.online.parameters(), {**self.manifest(), **(extra or {})})

    @classmethod
    def load(cls, path) -> tuple[SubAgent, dict]:
        header, tensors = load_checkpoint(path)
        agent = cls(header["n_single"], header["n_context"], SubAgentConfig(**header["config"]),
                    EnvConfig(**header["env"]), header.get("label", ""))
        agent.online.load_state(tensors)
        agent.sync_target()
        return agent, header


def episode_start(chunk: Chunk) -> int:
    return max(chunk.start_index, MIN_START)


def greedy_rollout(q_table: np.ndarray, closes, start: int, end: int, env_config: EnvConfig,
                   initial_position: int = 0):
    """Play argmax actions from a precomputed Q[t - start, P, a]; returns (actions, v0, v_end)."""
    env = TradingEnv(closes, env_config, end=end)
    state = env.reset(start, initial_position)
    v0 = state.net_value
    actions = []
    while not state.done:
        a = int(np.argmax(q_table[state.t - start, state.position]))
        actions.append(a)
        state, _, _ = env.step(state, a)
    return actions, v0, state.net_value


def evaluate_chunks(agent: SubAgent, data: TradingData, chunks) -> float:
    """Mean greedy return rate over chunks, each starting flat."""
    rates = []
    for ch in chunks:
        s, e = episode_start(ch), ch.end_index
        if e <= s:
            continue
        qt = agent.q_table(data, s, e + 1)
        _, v0, v1 = greedy_rollout(qt, data.closes, s, e, agent.env_config)
        rates.append((v1 - v0) / v0)
    return float(np.mean(rates)) if rates else float("nan")


@dataclass
class TrainResult:
    best_epoch: int
    best_score: float
    curve: list = field(default_factory=list)  # (epoch, mean_val_return, mean_loss)


def chunk_supervisor(data: TradingData, chunk: Chunk, env_config: EnvConfig, cache=None) -> tuple[int, OptimalQTable]:
    s = episode_start(chunk)
    closes = data.closes[s:chunk.end_index + 1]
    if cache is not None:
        table = cache.get(f"chunk:{s}-{chunk.end_index}", closes, env_config)
    else:
        table = dp_optimal_q(closes, env_config)
    return s, table


def train(agent: SubAgent, data: TradingData, train_chunks, val_chunks, epochs: int | None = None,
          q_cache=None, progress=None) -> TrainResult:
    """Fit on ``train_chunks``; keep the epoch with the best mean validation return rate.

    The agent is left holding the selected parameters (rounded to checkpoint
    precision) with its target network synced.
    """
    c = agent.config
    epochs = c.epochs if epochs is None else epochs
    if epochs < 1:
        raise InvalidEpochs(f"epochs must be >= 1, got {epochs}")
    train_chunks = [ch for ch in train_chunks if ch.end_index > episode_start(ch)]
    if not train_chunks:
        raise EmptySubset(f"no usable training chunks for sub-agent {agent.label!r}")
    if not val_chunks:
        log.warning("no validation chunks for %r; selecting by training chunks", agent.label)
        val_chunks = train_chunks

    rng = np.random.default_rng(c.seed + 7919)
    sup = {ch.start_index: chunk_supervisor(data, ch, agent.env_config, q_cache) for ch in train_chunks}
    steps_per_epoch = sum(ch.end_index - episode_start(ch) for ch in train_chunks)
    total = epochs * steps_per_epoch
    decay = max(1, int(c.eps_fraction * total))
    env_steps = 0
    best_score, best_epoch, best_state = -np.inf, -1, None
    result = TrainResult(-1, float("nan"))

    for epoch in range(1, epochs + 1):
        losses = []
        for k in rng.permutation(len(train_chunks)):
            ch = train_chunks[k]
            start, table = sup[ch.start_index]
            probs = table.supervisor(c.tau)
            env = TradingEnv(data.closes, agent.env_config, end=ch.end_index)
            state = env.reset(start, 0)
            while not state.done:
                frac = min(1.0, env_steps / decay)
                eps = c.eps_start + frac * (c.eps_end - c.eps_start)
                t, pos = state.t, state.position
                a = agent.act(data.s1[t], data.s2[t], pos, eps, rng)
                nxt, r, _ = env.step(state, a)
                agent.buffer.add(t, pos, a, r, nxt.t, nxt.done, probs[t - start, pos])
                state = nxt
                env_steps += 1
                if len(agent.buffer) >= min(c.batch_size, steps_per_epoch) and env_steps % c.train_every == 0:
                    idx = agent.buffer.sample_indices(c.batch_size, rng)
                    losses.append(agent.train_step(Batch.from_buffer(agent.buffer, idx, data)))
        score = evaluate_chunks(agent, data, val_chunks)
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        result.curve.append((epoch, score, mean_loss))
        if progress:
            progress(epoch, score, mean_loss)
        if score > best_score:
            best_score, best_epoch, best_state = score, epoch, agent.online.state()
    if best_state is not None:
        agent.online.load_state(best_state)
    round_to_checkpoint_precision(agent.online)
    agent.sync_target()
    result.best_epoch, result.best_score = best_epoch, float(best_score)
    return result
