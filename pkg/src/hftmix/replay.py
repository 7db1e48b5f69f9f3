"""Fixed-capacity FIFO replay buffer with uniform sampling.

Transitions are stored by minute index rather than by feature vector: the
features of minute ``t`` are a deterministic function of the series, so the
trainer looks them up at sampling time.
"""

from __future__ import annotations

import numpy as np


class ReplayBuffer:
    def __init__(self, capacity: int = 100_000, n_actions: int = 2):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.t = np.zeros(capacity, dtype=np.int64)
        self.position = np.zeros(capacity, dtype=np.int64)
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity)
        self.next_t = np.zeros(capacity, dtype=np.int64)
        self.done = np.zeros(capacity, dtype=bool)
        self.p_star = np.zeros((capacity, n_actions))
        self._next = 0
        self.size = 0
        self.added = 0

    def __len__(self):
        return self.size

    def add(self, t, position, action, reward, next_t, done, p_star):
        i = self._next
        self.t[i], self.position[i], self.action[i] = t, position, action
        self.reward[i], self.next_t[i], self.done[i] = reward, next_t, done
        self.p_star[i] = p_star
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.added += 1

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=batch_size)

    def oldest_t(self) -> int:
        """Minute index of the oldest stored transition."""
        i = 0 if self.size < self.capacity else self._next
        return int(self.t[i])
