"""Longitudinal vehicle dynamics: IDM car following and its integrator.

All braking in the simulator, including stopping at a gated intersection
entrance, goes through the one car-following law here; gates are presented
to it as standing virtual leaders. Integration is semi-implicit Euler with
the speed clamped at zero before the position update.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

VEHICLE_LENGTH = 5.0  # m, bumper to bumper gaps everywhere
WAIT_SPEED_THRESHOLD = 0.1  # m/s, below this a vehicle accumulates wait


class Kind(enum.Enum):
    RV = "RV"
    HV = "HV"


@dataclass(frozen=True)
class IdmParams:
    """Intelligent Driver Model parameters.

    Defaults are common passenger-car values; desired_speed is normally
    overridden with the lane speed limit.
    """

    desired_speed: float = 13.89  # v0, m/s
    time_headway: float = 1.0  # T, s
    min_gap: float = 2.0  # s0, m
    max_accel: float = 2.6  # a, m/s^2
    comfort_decel: float = 4.5  # b, m/s^2
    exponent: float = 4.0  # delta

    def __post_init__(self) -> None:
        vals = (self.desired_speed, self.time_headway, self.min_gap,
                self.max_accel, self.comfort_decel)
        if any(x <= 0 for x in vals):
            raise ValueError("IDM parameters must be strictly positive")
        if self.exponent < 1:
            raise ValueError("IDM exponent must be >= 1")


@dataclass
class VehicleState:
    """Snapshot of one vehicle, used at API boundaries and in logs."""

    id: int
    kind: Kind
    segment: str
    pos: float
    speed: float
    accel: float
    movement: "object"
    wait: float
    spawn_time: float


class CollisionError(RuntimeError):
    """A bumper-to-bumper gap reached zero: control-logic invariant breach."""


def idm_acceleration(v: float, leader_speed: float | None, gap: float | None,
                     p: IdmParams) -> float:
    """IDM acceleration for one vehicle.

    With a leader:  a = a_max * (1 - (v/v0)^delta - (s*/gap)^2)
    where           s* = s0 + v*T + v*(v - v_leader) / (2*sqrt(a_max*b))
    Without one, the interaction term is zero.

    Raises ValueError when called with gap <= 0 and a leader present; that
    is a collision state the caller must have prevented.
    """
    if v < 0:
        raise ValueError(f"speed must be non-negative, got {v}")
    free = 1.0 - (v / p.desired_speed) ** p.exponent
    if leader_speed is None or gap is None:
        return p.max_accel * free
    if gap <= 0:
        raise ValueError(f"gap must be positive with a leader present, got {gap}")
    s_star = p.min_gap + v * p.time_headway + v * (v - leader_speed) / (
        2.0 * math.sqrt(p.max_accel * p.comfort_decel)
    )
    return p.max_accel * (free - (s_star / gap) ** 2)


def idm_acceleration_arrays(v: np.ndarray, leader_speed: np.ndarray, gap: np.ndarray,
                            has_leader: np.ndarray, desired_speed: np.ndarray,
                            p: IdmParams) -> np.ndarray:
    """Vectorized IDM over aligned arrays; entries without a leader use the
    free-road term only. Gap values where has_leader is false are ignored."""
    free = 1.0 - (v / desired_speed) ** p.exponent
    accel = p.max_accel * free
    if has_leader.any():
        vi = v[has_leader]
        gi = gap[has_leader]
        s_star = p.min_gap + vi * p.time_headway + vi * (vi - leader_speed[has_leader]) / (
            2.0 * math.sqrt(p.max_accel * p.comfort_decel)
        )
        accel[has_leader] -= p.max_accel * (s_star / gi) ** 2
    return accel


def integrate(v: np.ndarray, accel: np.ndarray, pos: np.ndarray, dt: float):
    """Semi-implicit Euler step: clamp speed at zero, then move.

    Returns (new_speed, new_pos, effective_accel); the effective value is
    (v_new - v_old)/dt and is what wait accounting, records and emissions
    use, so a clamped stop never reports a physically impossible decel.
    """
    v_new = np.maximum(v + accel * dt, 0.0)
    pos_new = pos + v_new * dt
    eff = (v_new - v) / dt
    return v_new, pos_new, eff


def lane_order(vehicles) -> list:
    """Sort vehicle snapshots front to back.

    Strictly decreasing pos; ties broken by earlier spawn_time (the earlier
    vehicle is treated as being in front).
    """
    return sorted(vehicles, key=lambda s: (-s.pos, s.spawn_time, s.id))


def step_vehicles(world, dt: float):
    """Advance any world-like object one tick; returns per-vehicle records."""
    return world.step_vehicles(dt)


@dataclass
class _RoadVehicle:
    id: int
    pos: float
    speed: float
    spawn_time: float
    scripted: "object" = None  # accel(t) callable overriding IDM
    accel: float = 0.0


class Road:
    """A single open lane, for isolated car-following runs.

    No gating, no spawning: vehicles are placed explicitly and the front
    vehicle drives free road (or a scripted acceleration profile). Exists
    so following behavior can be tested against ODE oracles without the
    intersection machinery.
    """

    def __init__(self, length: float = 10_000.0, params: IdmParams | None = None):
        self.length = length
        self.params = params or IdmParams()
        self.t = 0.0
        self._vehicles: list[_RoadVehicle] = []
        self._next_id = 0

    def add_vehicle(self, pos: float, speed: float = 0.0, scripted=None) -> int:
        """Insert a vehicle; fails if it would overlap an existing one."""
        for other in self._vehicles:
            if abs(other.pos - pos) < VEHICLE_LENGTH:
                raise ValueError(f"vehicle at {pos} overlaps vehicle {other.id}")
        vid = self._next_id
        self._next_id += 1
        self._vehicles.append(_RoadVehicle(vid, pos, speed, self.t, scripted))
        self._vehicles.sort(key=lambda r: -r.pos)
        return vid

    def vehicle(self, vid: int) -> VehicleState:
        for r in self._vehicles:
            if r.id == vid:
                return VehicleState(r.id, Kind.HV, "road", r.pos, r.speed,
                                    r.accel, None, 0.0, r.spawn_time)
        raise KeyError(vid)

    def gaps(self) -> list[float]:
        """Bumper-to-bumper gaps front to back."""
        out = []
        for front, back in zip(self._vehicles, self._vehicles[1:]):
            out.append(front.pos - VEHICLE_LENGTH - back.pos)
        return out

    def step_vehicles(self, dt: float) -> list[tuple[int, float, float]]:
        """One integration step; returns (id, speed, effective accel) records."""
        if not self._vehicles:
            self.t += dt
            return []
        accels = []
        for i, r in enumerate(self._vehicles):
            if r.scripted is not None:
                accels.append(float(r.scripted(self.t)))
                continue
            if i == 0:
                accels.append(idm_acceleration(r.speed, None, None, self.params))
            else:
                front = self._vehicles[i - 1]
                gap = front.pos - VEHICLE_LENGTH - r.pos
                accels.append(idm_acceleration(r.speed, front.speed, gap, self.params))
        records = []
        for r, a in zip(self._vehicles, accels):
            v_new = max(r.speed + a * dt, 0.0)
            eff = (v_new - r.speed) / dt
            r.pos += v_new * dt
            r.speed = v_new
            r.accel = eff
            records.append((r.id, v_new, eff))
        self.t += dt
        for gap in self.gaps():
            if gap <= 0:
                raise CollisionError(f"gap {gap:.3f} m at t={self.t:.1f} s")
        return records
