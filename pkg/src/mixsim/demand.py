"""Seeded stochastic demand: Poisson arrivals per lane, RV/HV assignment.

Every random quantity comes from a counter-addressed stream so that adding
a lane, changing the horizon, or reordering consumption never perturbs any
other stream. Arrival streams use numpy's SeedSequence keyed by
(seed, stream tag, intersection, lane); per-vehicle draws (kind, routing)
use a splitmix64 hash of (seed, stream tag, index), which is stateless.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import Kind
from .topology import IntersectionSpec, Movement

_STREAM_ARRIVALS = 0xA1
_STREAM_KIND = 0xB2
_STREAM_ROUTE = 0xC3

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 round; full-period 64-bit mixer."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _hash_uniform(*keys: int) -> float:
    """Deterministic uniform in [0, 1) from integer keys."""
    h = 0
    for k in keys:
        h = splitmix64(h ^ (k & _MASK64))
    return h / 2.0**64


@dataclass(frozen=True)
class DemandSpec:
    """Arrival and composition parameters for one run."""

    per_lane_rate: float  # veh/hour, every incoming lane of the intersection
    rv_penetration: float
    seed: int

    def __post_init__(self) -> None:
        if self.per_lane_rate <= 0:
            raise ValueError("per_lane_rate must be positive")
        if not 0.0 <= self.rv_penetration <= 1.0:
            raise ValueError("rv_penetration must be in [0, 1]")


def arrival_stream(spec: DemandSpec, lane: tuple[int, int], horizon: float) -> np.ndarray:
    """Arrival times of a homogeneous Poisson process on one lane.

    lane is the (intersection index, lane index) pair identifying the
    stream. Returns strictly increasing times in (0, horizon]. The same
    (spec, lane, horizon-prefix) always yields the same times: extending
    the horizon only appends.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    int_idx, lane_idx = lane
    rng = np.random.default_rng(
        np.random.SeedSequence((spec.seed & _MASK64, _STREAM_ARRIVALS, int_idx, lane_idx))
    )
    scale = 3600.0 / spec.per_lane_rate  # mean headway, s
    chunks = []
    total = 0.0
    # draw in fixed-size blocks so consumption is reproducible
    block = max(64, int(horizon / scale * 1.25) + 16)
    while total <= horizon:
        gaps = rng.exponential(scale=scale, size=block)
        chunks.append(gaps)
        total += float(gaps.sum())
    times = np.cumsum(np.concatenate(chunks))
    return times[times <= horizon]


def assign_kind(spec: DemandSpec, vehicle_index: int) -> Kind:
    """RV/HV draw for the vehicle_index-th spawned vehicle.

    I.i.d. Bernoulli(rv_penetration), a pure function of (seed, index).
    """
    u = _hash_uniform(spec.seed, _STREAM_KIND, vehicle_index)
    return Kind.RV if u < spec.rv_penetration else Kind.HV


def assign_movement(intersection: IntersectionSpec, lane: int) -> Movement:
    """The fixed movement of a lane; lanes are movement-dedicated."""
    try:
        return intersection.movement_of_lane[lane]
    except IndexError:
        raise ValueError(
            f"intersection {intersection.id}: lane {lane} has no movement mapping"
        ) from None


def route_choice(seed: int, vehicle_id: int, hop: int, n_options: int) -> int:
    """Deterministic option pick for vehicle routing (connector entry lane)."""
    if n_options <= 0:
        raise ValueError("n_options must be positive")
    u = _hash_uniform(seed, _STREAM_ROUTE, vehicle_id, hop)
    return min(int(u * n_options), n_options - 1)
