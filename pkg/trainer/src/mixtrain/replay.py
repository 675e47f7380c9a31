"""Prioritized experience replay (proportional variant)."""

from __future__ import annotations

import numpy as np


class PrioritizedReplay:
    """Fixed-capacity ring buffer sampling transitions proportional to
    |TD error|^alpha, with importance-sampling weights to undo the bias.
    """

    def __init__(self, capacity: int, obs_dim: int, alpha: float = 0.6,
                 beta: float = 0.4, eps: float = 1e-3):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.alpha = alpha
        self.beta = beta
        self.eps = eps
        self._obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self._action = np.zeros(capacity, dtype=np.int64)
        self._reward = np.zeros(capacity, dtype=np.float32)
        self._next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self._done = np.zeros(capacity, dtype=np.float32)
        self._prio = np.zeros(capacity, dtype=np.float64)
        self._size = 0
        self._cursor = 0

    def __len__(self) -> int:
        return self._size

    def push(self, obs: np.ndarray, action: int, reward: float,
             next_obs: np.ndarray, done: bool) -> None:
        i = self._cursor
        self._obs[i] = obs
        self._action[i] = action
        self._reward[i] = reward
        self._next_obs[i] = next_obs
        self._done[i] = 1.0 if done else 0.0
        # new entries get max priority so everything is seen at least once
        peak = self._prio[:self._size].max() if self._size else 1.0
        self._prio[i] = peak
        self._cursor = (self._cursor + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        if self._size == 0:
            raise ValueError("buffer is empty")
        scaled = self._prio[:self._size] ** self.alpha
        probs = scaled / scaled.sum()
        idx = rng.choice(self._size, size=batch_size, p=probs)
        weights = (self._size * probs[idx]) ** (-self.beta)
        weights /= weights.max()
        batch = {
            "obs": self._obs[idx],
            "action": self._action[idx],
            "reward": self._reward[idx],
            "next_obs": self._next_obs[idx],
            "done": self._done[idx],
            "weights": weights.astype(np.float32),
        }
        return idx, batch

    def update_priorities(self, idx: np.ndarray, td_errors: np.ndarray) -> None:
        self._prio[idx] = np.abs(td_errors) + self.eps
