"""Double-DQN agent: online/target networks, epsilon-greedy acting,
prioritized-replay updates.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .model import QNet
from .replay import PrioritizedReplay

STOP, GO = 0, 1
TOKENS = ("Stop", "Go")


class Agent:
    def __init__(self, obs_dim: int, hidden: tuple[int, ...],
                 lr: float, gamma: float, seed: int = 0):
        torch.manual_seed(seed)
        self.online = QNet(obs_dim, hidden)
        self.target = QNet(obs_dim, hidden)
        self.target.load_state_dict(self.online.state_dict())
        self.target.eval()
        self.opt = torch.optim.Adam(self.online.parameters(), lr=lr)
        self.gamma = gamma
        self.obs_dim = obs_dim

    def act(self, obs: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
        if rng.random() < epsilon:
            return int(rng.integers(2))
        with torch.no_grad():
            q = self.online(torch.from_numpy(obs).unsqueeze(0))
        return int(q.argmax(dim=1).item())

    def greedy_batch(self, obs: np.ndarray) -> np.ndarray:
        """Greedy actions for a stack of observations, shape (n, obs_dim)."""
        with torch.no_grad():
            q = self.online(torch.from_numpy(obs))
        return q.argmax(dim=1).numpy()

    def update(self, buffer: PrioritizedReplay, batch_size: int,
               rng: np.random.Generator) -> float:
        idx, batch = buffer.sample(batch_size, rng)
        obs = torch.from_numpy(batch["obs"])
        action = torch.from_numpy(batch["action"])
        reward = torch.from_numpy(batch["reward"])
        next_obs = torch.from_numpy(batch["next_obs"])
        done = torch.from_numpy(batch["done"])
        weights = torch.from_numpy(batch["weights"])

        q = self.online(obs).gather(1, action.unsqueeze(1)).squeeze(1)
        with torch.no_grad():
            # double estimator: online picks, target evaluates
            best = self.online(next_obs).argmax(dim=1, keepdim=True)
            q_next = self.target(next_obs).gather(1, best).squeeze(1)
            y = reward + self.gamma * (1.0 - done) * q_next
        td = q - y
        loss = (weights * nn.functional.smooth_l1_loss(q, y, reduction="none")).mean()
        self.opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(self.online.parameters(), 10.0)
        self.opt.step()
        buffer.update_priorities(idx, td.detach().numpy())
        return float(loss.item())

    def sync_target(self) -> None:
        self.target.load_state_dict(self.online.state_dict())
