"""Exact optimal action values for the single-lot trading MDP on a known price path.

``Q[t, p, a]`` is the best discounted reward obtainable from minute ``t`` when
holding ``p`` and choosing target position ``a`` now. The last minute has no
next close, so its reward is only the fee of a position change; nothing is
forcibly liquidated at the horizon.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import EnvConfig
from .errors import SegmentTooLong, SegmentTooShort
from .neural import softmax

BRUTE_FORCE_MAX_T = 14


@dataclass(frozen=True)
class OptimalQTable:
    q: np.ndarray  # (T, 2, 2) indexed [t, position, action]
    gamma: float

    def __len__(self):
        return self.q.shape[0]

    def value(self, t: int = 0, position: int = 0) -> float:
        return float(self.q[t, position].max())

    def greedy_actions(self, position: int = 0) -> list[int]:
        """Optimal path from ``position`` at t=0 (ties go to action 0)."""
        out, p = [], position
        for t in range(len(self)):
            a = int(np.argmax(self.q[t, p]))
            out.append(a)
            p = a
        return out

    def supervisor(self, tau: float = 1.0) -> np.ndarray:
        """softmax(Q[t, p, :] / tau) for every (t, p)."""
        return softmax(self.q / tau, axis=-1)


def _full_rewards(closes: np.ndarray, fee_rate: float, m_size: float) -> np.ndarray:
    """r[t, p, a] for t in [0, T); the last row carries only the switching fee."""
    p = closes
    T = len(p)
    dp = np.append(p[1:] - p[:-1], 0.0)
    fee = fee_rate * p
    r = np.empty((T, 2, 2))
    for pos in (0, 1):
        for a in (0, 1):
            r[:, pos, a] = (a * dp - fee * abs(a - pos)) * m_size
    return r


def _prepare(closes, env_config: EnvConfig, gamma):
    c = np.asarray(closes, dtype=float)
    g = env_config.gamma if gamma is None else float(gamma)
    if not 0.0 <= g <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {g}")
    return c, g


def dp_optimal_q(closes, env_config: EnvConfig = EnvConfig(), gamma: float | None = None) -> OptimalQTable:
    """Backward induction, O(T) time and memory. ``gamma`` overrides the config (1 allowed)."""
    c, g = _prepare(closes, env_config, gamma)
    T = len(c)
    if T < 2:
        raise SegmentTooShort(f"need at least 2 closes, got {T}")
    r = _full_rewards(c, env_config.fee_rate, env_config.m_size)
    q = np.empty_like(r)
    q[T - 1] = r[T - 1]
    for t in range(T - 2, -1, -1):
        best_next = q[t + 1].max(axis=1)  # best_next[a] = max_a' Q[t+1, a, a']
        q[t] = r[t] + g * best_next[None, :]
    return OptimalQTable(q, g)


def brute_force_q(closes, env_config: EnvConfig = EnvConfig(), gamma: float | None = None) -> OptimalQTable:
    """Same table by enumerating every continuation action sequence (test oracle)."""
    c, g = _prepare(closes, env_config, gamma)
    T = len(c)
    if T < 2:
        raise SegmentTooShort(f"need at least 2 closes, got {T}")
    if T > BRUTE_FORCE_MAX_T:
        raise SegmentTooLong(f"brute force limited to T <= {BRUTE_FORCE_MAX_T}, got {T}")
    r = _full_rewards(c, env_config.fee_rate, env_config.m_size)
    q = np.empty((T, 2, 2))
    for t in range(T):
        L = T - 1 - t
        if L == 0:
            q[t] = r[t]
            continue
        codes = np.arange(2 ** L)
        seqs = (codes[:, None] >> np.arange(L)[None, :]) & 1  # (2^L, L) actions at t+1..T-1
        disc = g ** np.arange(1, L + 1)
        steps = np.arange(t + 1, T)
        for pos in (0, 1):
            for a in (0, 1):
                prev = np.concatenate([np.full((len(seqs), 1), a), seqs[:, :-1]], axis=1)
                rew = r[steps[None, :], prev, seqs]
                q[t, pos, a] = r[t, pos, a] + (rew * disc).sum(axis=1).max()
    return OptimalQTable(q, g)


class OptimalQCache:
    """On-disk cache of Q tables keyed by (segment id, fee, gamma, m_size, closes digest)."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def _key(segment_id: str, closes: np.ndarray, cfg: EnvConfig, gamma: float) -> dict:
        digest = hashlib.sha256(np.ascontiguousarray(closes, dtype="<f8").tobytes()).hexdigest()
        return {"segment_id": segment_id, "fee_rate": cfg.fee_rate, "gamma": gamma,
                "m_size": cfg.m_size, "length": int(len(closes)), "closes_sha256": digest}

    def get(self, segment_id: str, closes, cfg: EnvConfig, gamma: float | None = None) -> OptimalQTable:
        c = np.asarray(closes, dtype=float)
        g = cfg.gamma if gamma is None else float(gamma)
        key = self._key(segment_id, c, cfg, g)
        name = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:24]
        arr_path, meta_path = self.dir / f"{name}.npy", self.dir / f"{name}.json"
        if arr_path.exists() and meta_path.exists():
            if json.loads(meta_path.read_text()) == key:
                return OptimalQTable(np.load(arr_path), g)
        table = dp_optimal_q(c, cfg, g)
        np.save(arr_path, table.q.astype("<f8"))
        meta_path.write_text(json.dumps(key, sort_keys=True, indent=2))
        return table
