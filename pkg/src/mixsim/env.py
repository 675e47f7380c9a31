"""The intersection simulator as a multi-agent POMDP.

Agents are the robot vehicles currently at a control-zone queue head; every
agent at one intersection shares the same observation vector (per-movement
RV queue lengths and normalized waits plus the flattened interior occupancy
grid) and all agents everywhere are scored by the same reward function:

    r = r_L + p_c,  r_L = -w if Stop else +w,  p_c = -1 on a conflicting Go

where w is the normalized mean wait of all vehicles heading the agent's
direction. Rewards therefore always lie in [-2, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import DEFAULT_WAIT_NORMALIZER, Action, build_occupancy
from .dynamics import IdmParams
from .emissions import EmissionCoefficients
from .topology import MOVEMENTS, ConflictTable, Movement, NetworkSpec
from .world import FRAME_METRICS, World


@dataclass(frozen=True)
class EpisodeConfig:
    horizon: int  # ticks
    gamma: float = 0.99
    warmup: float = 0.0  # seconds simulated before the first decision
    action_interval: int = 1  # ticks between decisions
    wait_normalizer: float = DEFAULT_WAIT_NORMALIZER
    dt: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.warmup < 0 or self.horizon * self.dt <= self.warmup:
            raise ValueError("need horizon * dt > warmup >= 0")
        if self.action_interval < 1:
            raise ValueError("action_interval must be >= 1")


@dataclass(frozen=True)
class RewardTerms:
    r_l: float
    p_c: float

    @property
    def total(self) -> float:
        return self.r_l + self.p_c


def reward(action: Action, w_d: float, conflict_flag: bool) -> RewardTerms:
    """Reward for one Stop/Go decision given the direction's normalized wait."""
    if not 0.0 <= w_d <= 1.0:
        raise ValueError(f"w_d must be in [0, 1], got {w_d}")
    r_l = w_d if action is Action.GO else -w_d
    p_c = -1.0 if conflict_flag else 0.0
    return RewardTerms(r_l=r_l, p_c=p_c)


def observe(world: World, intersection: int) -> np.ndarray:
    """Observation vector for one intersection.

    Layout: [q_0, w_0, ..., q_7, w_7] over the eight movements in canonical
    order (N-S, N-L, E-S, E-L, S-S, S-L, W-S, W-L), where q counts RVs in
    that movement's control-zone queues and w is their mean accumulated
    wait normalized by the configured constant and clamped to [0, 1];
    then the occupancy grid, row-major, 0.0/1.0 per cell. Movements with
    no RVs contribute (0, 0).
    """
    counts, mean_waits = world.cz_rv_stats(intersection)
    norm = getattr(world, "wait_normalizer", DEFAULT_WAIT_NORMALIZER)
    w = np.clip(mean_waits / norm, 0.0, 1.0)
    w[counts == 0] = 0.0
    per_dir = np.empty(16)
    per_dir[0::2] = counts
    per_dir[1::2] = w
    grid = build_occupancy(world, intersection).flatten()
    return np.concatenate([per_dir, grid])


def observation_dim(network: NetworkSpec) -> int:
    """All intersections in a scenario share one observation layout; the
    scenario is rejected otherwise."""
    shapes = {s.grid_shape for s in network.intersections}
    if len(shapes) != 1:
        raise ValueError("intersections disagree on grid shape; mixed layouts unsupported")
    rows, cols = shapes.pop()
    return 16 + rows * cols


class TrafficEnv:
    """step/reset episode driver over a World.

    One instance drives one episode at a time; reset builds a fresh seeded
    world. Many instances can run concurrently.
    """

    def __init__(
        self,
        network: NetworkSpec,
        config: EpisodeConfig,
        *,
        signalized: bool = False,
        params: IdmParams | None = None,
        table: ConflictTable | None = None,
        coeffs: EmissionCoefficients | None = None,
        record_metrics: bool = True,
        trajectory_writer=None,
    ) -> None:
        self.network = network
        self.config = config
        self.signalized = signalized
        self._params = params
        self._table = table
        self._coeffs = coeffs
        self._record = record_metrics
        self._traj = trajectory_writer
        self.world: World | None = None
        self.tick_count = 0
        self.obs_dim = observation_dim(network)

    # ------------------------------------------------------------------

    def reset(self, seed: int, rv_rate: float) -> dict[int, np.ndarray]:
        """Start a fresh episode; returns observations for eligible RVs."""
        cfg = self.config
        self.world = World(
            self.network,
            rv_rate,
            seed,
            signalized=self.signalized,
            horizon=cfg.warmup + cfg.horizon * cfg.dt,
            dt=cfg.dt,
            params=self._params,
            table=self._table,
            coeffs=self._coeffs,
            record_metrics=self._record,
            trajectory_writer=self._traj,
        )
        self.world.wait_normalizer = cfg.wait_normalizer
        self.tick_count = 0
        warmup_ticks = int(round(cfg.warmup / cfg.dt))
        for _ in range(warmup_ticks):
            self.world.tick({})
        return self._observations()

    def _require_world(self) -> World:
        if self.world is None:
            raise RuntimeError("reset() must be called before stepping")
        return self.world

    def _observations(self) -> dict[int, np.ndarray]:
        world = self._require_world()
        cache: dict[int, np.ndarray] = {}
        out: dict[int, np.ndarray] = {}
        for vid, i, _m in world.eligible_rvs():
            if i not in cache:
                cache[i] = observe(world, i)
            out[vid] = cache[i]
        return out

    def step(self, actions: dict[int, Action | str]):
        """Apply one decision round and advance action_interval ticks.

        Returns (observations, rewards, done, info): observations for the
        RVs eligible at the new state, rewards for the RVs that just acted,
        done when the tick horizon is reached, info carrying the per-second
        metrics recorded during the advance plus conflict/throughput
        counters.
        """
        world = self._require_world()
        cfg = self.config
        if self.tick_count >= cfg.horizon:
            raise RuntimeError("episode is done; call reset()")

        parsed: dict[int, Action] = {
            vid: a if isinstance(a, Action) else Action.parse(a)
            for vid, a in actions.items()
        }
        eligible = {vid: (i, m) for vid, i, m in world.eligible_rvs()}

        # direction waits are taken at decision time, before the world moves
        wait_cache: dict[tuple[int, Movement], float] = {}
        w_norm: dict[int, float] = {}
        for vid, (i, m) in eligible.items():
            key = (i, m)
            if key not in wait_cache:
                raw = world.direction_wait(i, m)
                wait_cache[key] = min(max(raw / cfg.wait_normalizer, 0.0), 1.0)
            w_norm[vid] = wait_cache[key]

        flags = world.tick(parsed)
        self.tick_count += 1
        for _ in range(cfg.action_interval - 1):
            if self.tick_count >= cfg.horizon:
                break
            world.tick({})
            self.tick_count += 1

        rewards = {}
        for vid, (i, m) in eligible.items():
            act = parsed.get(vid, Action.STOP)
            _released, conflict = flags.get(vid, (False, False))
            rewards[vid] = reward(act, w_norm[vid], conflict).total

        done = self.tick_count >= cfg.horizon
        info = {
            "t": world.t,
            "frame_metrics": list(FRAME_METRICS),
            "conflict_flags": world.conflict_flags,
            "monitor_violations": world.monitor_violations,
            "crossed": world.crossed.copy(),
            "deferred_seconds": world.deferred_seconds,
        }
        return self._observations(), rewards, done, info
