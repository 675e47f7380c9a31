"""Training loop: drives a remote env over the wire protocol and fits a
shared per-vehicle Q policy with double-DQN + prioritized replay.
"""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path

import numpy as np
import torch

from .agent import STOP, TOKENS, Agent
from .client import EnvClient, Transition
from .replay import PrioritizedReplay


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    # env steps per iteration; iteration size is a free choice here, nothing
    # canonical is claimed for the default
    steps_per_iteration: int = 100
    hidden: tuple[int, ...] = (512, 512, 512)
    learning_rate: float = 0.0005
    discount: float = 0.99
    replay_capacity: int = 100_000
    batch_size: int = 64
    min_buffer: int = 256
    target_sync: int = 500
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 20_000
    seed: int = 1
    # episode shape forwarded to the env on every reset
    rv_rate: float = 1.0
    horizon: int = 300
    warmup: float = 0.0
    action_interval: int = 1

    def __post_init__(self):
        if self.iterations < 1 or self.steps_per_iteration < 1:
            raise ValueError("iterations and steps_per_iteration must be positive")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must lie in (0, 1]")
        if self.batch_size > self.replay_capacity:
            raise ValueError("batch_size exceeds replay capacity")


def _epsilon(cfg: TrainConfig, step: int) -> float:
    frac = min(step / cfg.epsilon_decay_steps, 1.0)
    return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)


class _EpisodeTracker:
    """Accumulates the summed per-vehicle reward of the running episode."""

    def __init__(self):
        self.partial = 0.0
        self.completed: list[float] = []

    def add(self, rewards: dict[int, float], done: bool) -> None:
        self.partial += sum(rewards.values())
        if done:
            self.completed.append(self.partial)
            self.partial = 0.0

    def drain(self) -> tuple[list[float], float]:
        out, self.completed = self.completed, []
        return out, self.partial


def train(endpoint: str, scenario: str, config: TrainConfig,
          out_dir: str | Path) -> Path:
    """Run the training loop; returns the path of the final checkpoint.

    Writes ``returns.csv`` (one row per iteration: the mean return of
    episodes finished during it, falling back to the running partial sum
    when none finished) and ``checkpoint.pt`` into ``out_dir``.
    """
    from .model import save_checkpoint

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)

    with EnvClient(endpoint) as env:
        episode_seed = config.seed
        obs = env.reset(scenario, episode_seed, config.rv_rate, config.horizon,
                        warmup=config.warmup,
                        action_interval=config.action_interval)
        agent = Agent(env.obs_dim, config.hidden, config.learning_rate,
                      config.discount, seed=config.seed)
        buffer = PrioritizedReplay(config.replay_capacity, env.obs_dim)
        zero_obs = np.zeros(env.obs_dim, dtype=np.float32)

        tracker = _EpisodeTracker()
        curve: list[tuple[int, int, float]] = []
        global_step = 0
        decisions = 0
        stored = 0

        for iteration in range(1, config.iterations + 1):
            for _ in range(config.steps_per_iteration):
                eps = _epsilon(config, global_step)
                acts = {vid: agent.act(o, eps, rng) for vid, o in obs.items()}
                decisions += len(acts)
                tr: Transition = env.act(
                    {vid: TOKENS[a] for vid, a in acts.items()})
                tracker.add(tr.rewards, tr.done)

                for vid, o in obs.items():
                    nxt = tr.obs.get(vid)
                    # a vehicle absent from the next decision set has left
                    # the control zone: no bootstrap target exists for it
                    terminal = tr.done or nxt is None
                    buffer.push(o, acts[vid], tr.rewards[vid],
                                zero_obs if nxt is None else nxt, terminal)
                    stored += 1

                if len(buffer) >= config.min_buffer:
                    agent.update(buffer, config.batch_size, rng)
                if global_step % config.target_sync == 0:
                    agent.sync_target()
                global_step += 1

                if tr.done:
                    episode_seed += 1
                    obs = env.reset(scenario, episode_seed, config.rv_rate,
                                    config.horizon, warmup=config.warmup,
                                    action_interval=config.action_interval)
                else:
                    obs = tr.obs

            finished, partial = tracker.drain()
            mean_ret = float(np.mean(finished)) if finished else partial
            curve.append((iteration, len(finished), mean_ret))

        assert stored == decisions, "one stored transition per decision"

    with open(out / "returns.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "episodes", "mean_return"])
        for row in curve:
            w.writerow([row[0], row[1], f"{row[2]:.6f}"])

    ckpt = out / "checkpoint.pt"
    save_checkpoint(ckpt, agent.online, meta={
        "scenario": scenario,
        "config": dataclasses.asdict(config),
    })
    return ckpt


# ----------------------------------------------------------------------
# evaluation helpers (greedy checkpoint vs trivial baselines, over the wire)


def run_episode(env: EnvClient, scenario: str, seed: int, rv_rate: float,
                horizon: int, decide, warmup: float = 0.0,
                action_interval: int = 1) -> float:
    """Play one full episode; returns the summed per-vehicle reward."""
    obs = env.reset(scenario, seed, rv_rate, horizon, warmup=warmup,
                    action_interval=action_interval)
    total = 0.0
    while True:
        tr = env.act(decide(obs))
        total += sum(tr.rewards.values())
        if tr.done:
            return total
        obs = tr.obs


def greedy_decider(model):
    def decide(obs: dict[int, np.ndarray]) -> dict[int, str]:
        if not obs:
            return {}
        vids = sorted(obs)
        with torch.no_grad():
            stack = torch.from_numpy(np.stack([obs[v] for v in vids]))
            picks = model(stack).argmax(dim=1).tolist()
        return {v: TOKENS[int(a)] for v, a in zip(vids, picks)}
    return decide


def all_stop_decider(obs: dict[int, np.ndarray]) -> dict[int, str]:
    return {vid: TOKENS[STOP] for vid in obs}


def evaluate_checkpoint(endpoint: str, scenario: str, checkpoint: str | Path,
                        seeds: list[int], rv_rate: float = 1.0,
                        horizon: int = 300, warmup: float = 0.0,
                        action_interval: int = 1) -> dict:
    """Mean episode return of the checkpoint's greedy policy and of the
    all-Stop baseline over the same seeded episodes.
    """
    from .model import load_checkpoint

    model, _meta = load_checkpoint(checkpoint)
    greedy = greedy_decider(model)
    with EnvClient(endpoint) as env:
        trained = [run_episode(env, scenario, s, rv_rate, horizon, greedy,
                               warmup, action_interval) for s in seeds]
        stopped = [run_episode(env, scenario, s, rv_rate, horizon,
                               all_stop_decider, warmup, action_interval)
                   for s in seeds]
    return {
        "trained_mean": float(np.mean(trained)),
        "all_stop_mean": float(np.mean(stopped)),
        "trained": [float(x) for x in trained],
        "all_stop": [float(x) for x in stopped],
    }
