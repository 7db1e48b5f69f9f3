"""Episodic memory: FIFO key/experience/value store with top-m L2 retrieval.

Retrieval is global over the store; the action filter is applied during
aggregation, so a lookup can come back with no entry matching the queried
action. In that case the aggregate is ``None`` (absent) and callers skip the
memory term for that sample.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMemory, KeyDimMismatch

# "proportional": weight grows with distance; "inverse": weight 1 / distance
KERNELS = ("proportional", "inverse")


@dataclass(frozen=True)
class MemoryConfig:
    capacity: int = 4096
    m_neighbors: int = 8
    eps: float = 1e-3
    kernel: str = "proportional"

    def __post_init__(self):
        if not self.capacity >= self.m_neighbors >= 1:
            raise ValueError("need capacity >= m_neighbors >= 1")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}")


@dataclass(frozen=True)
class Retrieved:
    index: np.ndarray     # slot indices into the store
    seq: np.ndarray
    distance: np.ndarray  # ||k - k_i||^2 + eps, ascending
    action: np.ndarray
    value: np.ndarray


class EpisodicMemory:
    """Ring storage of keys, experiences ``(t, position, action)`` and values."""

    def __init__(self, key_dim: int, config: MemoryConfig = MemoryConfig()):
        self.key_dim = key_dim
        self.config = config
        cap = config.capacity
        self.keys = np.zeros((cap, key_dim))
        self.values = np.zeros(cap)
        self.actions = np.zeros(cap, dtype=np.int64)
        self.t = np.zeros(cap, dtype=np.int64)
        self.positions = np.zeros(cap, dtype=np.int64)
        self.seq = np.full(cap, -1, dtype=np.int64)
        self.size = 0
        self.inserted = 0
        self._last_query: np.ndarray | None = None

    def __len__(self):
        return self.size

    def add(self, key, action: int, value: float, t: int = -1, position: int = 0) -> None:
        k = np.asarray(key, dtype=float).reshape(-1)
        if k.shape[0] != self.key_dim:
            raise KeyDimMismatch(f"key dim {k.shape[0]} != {self.key_dim}")
        if not np.isfinite(value):
            raise ValueError("memory value must be finite")
        i = self.inserted % self.config.capacity
        self.keys[i] = k
        self.values[i] = value
        self.actions[i] = action
        self.t[i] = t
        self.positions[i] = position
        self.seq[i] = self.inserted
        self.inserted += 1
        self.size = min(self.size + 1, self.config.capacity)

    def entries(self) -> list[tuple[int, int, float]]:
        """``(seq, action, value)`` of live entries, oldest first."""
        order = np.argsort(self.seq[:self.size])
        return [(int(self.seq[i]), int(self.actions[i]), float(self.values[i])) for i in order]

    def distances(self, key) -> np.ndarray:
        k = np.asarray(key, dtype=float).reshape(-1)
        if k.shape[0] != self.key_dim:
            raise KeyDimMismatch(f"key dim {k.shape[0]} != {self.key_dim}")
        diff = self.keys[:self.size] - k
        return np.einsum("ij,ij->i", diff, diff) + self.config.eps

    def lookup(self, key) -> Retrieved:
        """The ``m_neighbors`` closest entries; distance ties go to the older entry."""
        if self.size == 0:
            raise EmptyMemory("lookup on an empty memory")
        d = self.distances(key)
        self._last_query = np.asarray(key, dtype=float).reshape(-1).copy()
        m = min(self.config.m_neighbors, self.size)
        idx = np.lexsort((self.seq[:self.size], d))[:m]
        return Retrieved(idx, self.seq[idx], d[idx], self.actions[idx], self.values[idx])

    def weights(self, retrieved: Retrieved, action: int) -> np.ndarray | None:
        mask = retrieved.action == action
        if not mask.any():
            return None
        d = retrieved.distance
        raw = d if self.config.kernel == "proportional" else 1.0 / d
        w = np.where(mask, raw, 0.0)
        return w / w.sum()

    def aggregate(self, retrieved: Retrieved, action: int) -> float | None:
        w = self.weights(retrieved, action)
        if w is None:
            return None
        return float(w @ retrieved.value)

    def query(self, key, action: int) -> float | None:
        """Lookup plus aggregate; ``None`` when empty or no neighbour took ``action``."""
        if self.size == 0:
            return None
        return self.aggregate(self.lookup(key), action)

    def query_batch(self, keys, actions) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized ``query`` over rows. Returns ``(q_m, present_mask)``."""
        keys = np.asarray(keys, dtype=float)
        actions = np.asarray(actions)
        B = keys.shape[0]
        if self.size == 0:
            return np.zeros(B), np.zeros(B, dtype=bool)
        if keys.shape[1] != self.key_dim:
            raise KeyDimMismatch(f"key dim {keys.shape[1]} != {self.key_dim}")
        stored = self.keys[:self.size]
        # expanded squared distance; fine for training-time batches, lookup() stays exact
        d = ((keys * keys).sum(1)[:, None] - 2.0 * keys @ stored.T + (stored * stored).sum(1)[None, :])
        d = np.maximum(d, 0.0) + self.config.eps
        m = min(self.config.m_neighbors, self.size)
        if m < self.size:
            part = np.argpartition(d, m - 1, axis=1)[:, :m]
        else:
            part = np.broadcast_to(np.arange(self.size), (B, self.size))
        order = np.take_along_axis(part, np.argsort(np.take_along_axis(d, part, axis=1), axis=1), axis=1)
        dist = np.take_along_axis(d, order, axis=1)
        mask = self.actions[order] == actions[:, None]
        raw = dist if self.config.kernel == "proportional" else 1.0 / dist
        w = np.where(mask, raw, 0.0)
        tot = w.sum(axis=1)
        present = mask.any(axis=1)
        q = np.where(present, (w * self.values[order]).sum(axis=1) / np.where(present, tot, 1.0), 0.0)
        return q, present

    def dump_csv(self, path) -> None:
        """``seq,action,value,distance_to_last_query`` for live entries, oldest first."""
        dist = self.distances(self._last_query) if self._last_query is not None and self.size else None
        order = np.argsort(self.seq[:self.size])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seq", "action", "value", "distance_to_last_query"])
            for i in order:
                w.writerow([int(self.seq[i]), int(self.actions[i]), repr(float(self.values[i])),
                            "" if dist is None else repr(float(dist[i]))])
