"""The simulation engine: one World instance drives one seeded episode.

Vehicles live in structure-of-arrays storage and advance with a single
vectorized IDM step per tick. Per-segment front-to-back order lists carry
the queue structure; leaders chain across segment boundaries (approach lane
-> interior path -> connector -> next approach lane) so braking is smooth
through transfers. Intersection entry is mediated by per-intersection
gates; a vehicle committed by a release counts against its movement until
it clears the interior, which is what the conflict monitor checks.

Everything is deterministic given (network, seed, rv_rate, regime, dt):
order lists are mutated in a fixed scan order and all randomness comes from
the counter-addressed streams in the demand module.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import demand as demand_mod
from .control import (
    Action,
    GateState,
    SignalPlan,
    default_signal_plan,
    hv_gate_policy,
    movement_cell_path,
    signal_state,
)
from .demand import DemandSpec
from .dynamics import (
    VEHICLE_LENGTH,
    WAIT_SPEED_THRESHOLD,
    CollisionError,
    IdmParams,
    Kind,
    VehicleState,
    idm_acceleration_arrays,
)
from .emissions import (
    POLLUTANTS,
    EmissionCoefficients,
    emission_rate,
    load_coefficients,
)
from .topology import (
    EXIT_SIDE,
    MOVEMENTS,
    ConflictTable,
    Movement,
    NetworkSpec,
    default_conflict_table,
)

# segment kinds
_LANE, _RAIL, _CONN = 0, 1, 2

#: columns of the per-second metrics array, per scope
FRAME_METRICS: tuple[str, ...] = (
    "vehicles", "mean_wait", "mean_accel", "conflicts",
) + POLLUTANTS

_LOOKAHEAD = 100.0  # m, leaders farther than this are ignored
_WALL_EPS = 0.01  # m, clamp margin at the stop line
_MERGE_MIN_GAP = 0.3  # m, floor for virtual merge gaps
_ENTRY_CLEARANCE = 0.5  # m, extra space required beyond s0 at lane entry


@dataclass
class _Segment:
    idx: int
    name: str
    kind: int
    length: float
    vmax: float
    int_idx: int  # -1 for connectors
    movement: int  # movement code, -1 for connectors
    cz_start: float  # position where the control zone begins (inf if none)
    lane_idx: int = -1  # lane number within its intersection


class NotQueueHead(ValueError):
    """An action was supplied for a vehicle that is not an eligible head."""


class World:
    """One episode's mutable state. Build a fresh instance per run."""

    def __init__(
        self,
        network: NetworkSpec,
        rv_rate: float,
        seed: int,
        *,
        signalized: bool = False,
        horizon: float = 1200.0,
        dt: float = 1.0,
        params: IdmParams | None = None,
        table: ConflictTable | None = None,
        coeffs: EmissionCoefficients | None = None,
        record_metrics: bool = True,
        trajectory_writer=None,
    ) -> None:
        if dt <= 0 or dt > 1.0 or abs(round(1.0 / dt) * dt - 1.0) > 1e-9:
            raise ValueError("dt must be a positive divisor of 1 second")
        self.network = network
        self.rv_rate = float(rv_rate)
        self.seed = int(seed)
        self.signalized = bool(signalized)
        self.horizon = float(horizon)
        self.dt = float(dt)
        self.params = params or IdmParams()
        self.table = table or default_conflict_table()
        self.coeffs = coeffs or load_coefficients()
        self.record_metrics = bool(record_metrics)
        self.trajectory_writer = trajectory_writer

        self.t = 0.0
        self._build_segments()
        self._build_demand()
        self._build_control()
        self._alloc_vehicles(1024)

        self.scope_names = [s.id for s in network.intersections] + ["network"]
        n_frames = int(math.ceil(horizon))
        self.frames = np.full((n_frames, len(self.scope_names), len(FRAME_METRICS)), np.nan)
        self._bucket_sums = np.zeros((len(self.scope_names), len(FRAME_METRICS)))
        self._bucket_counts = np.zeros((len(self.scope_names), len(FRAME_METRICS)))
        self.conflict_log: list[tuple[float, str, str, str]] = []
        self.monitor_violations = 0
        self.conflict_flags = 0
        self.crossed = np.zeros(len(network.intersections), dtype=np.int64)
        self.deferred_seconds = 0.0
        self._spawn_counter = 0

    # ------------------------------------------------------------------
    # construction

    def _build_segments(self) -> None:
        net = self.network
        segs: list[_Segment] = []
        self.lane_segs: list[list[int]] = []  # per intersection, by lane idx
        self.rail_of_lane: dict[int, int] = {}
        self.lane_of_rail: dict[int, int] = {}

        for i, spec in enumerate(net.intersections):
            lanes = []
            for l in range(spec.lane_count):
                m = spec.movement_of_lane[l]
                s = _Segment(
                    idx=len(segs), name=f"{spec.id}:L{l}", kind=_LANE,
                    length=spec.lane_length, vmax=spec.speed_limit, int_idx=i,
                    movement=m.code,
                    cz_start=spec.lane_length - spec.control_zone_length,
                    lane_idx=l,
                )
                segs.append(s)
                lanes.append(s.idx)
            self.lane_segs.append(lanes)
            for l in range(spec.lane_count):
                m = spec.movement_of_lane[l]
                r = _Segment(
                    idx=len(segs), name=f"{spec.id}:R{l}", kind=_RAIL,
                    length=spec.interior_length_of(m), vmax=spec.speed_limit,
                    int_idx=i, movement=m.code, cz_start=0.0, lane_idx=l,
                )
                segs.append(r)
                self.rail_of_lane[lanes[l]] = r.idx
                self.lane_of_rail[r.idx] = lanes[l]

        # connector groups: one rail per destination lane
        int_index = {s.id: i for i, s in enumerate(net.intersections)}
        self.conn_groups: list[dict] = []
        self.exit_group: dict[tuple[int, str], int] = {}  # (int idx, side) -> group
        self.conn_dest_lane: dict[int, int] = {}
        self.conn_cap: dict[int, int] = {}
        seen_exit, seen_entry = set(), set()
        for c in net.connectors:
            si, ti = int_index[c.source], int_index[c.target]
            if (si, c.exit_side.value) in seen_exit:
                raise ValueError(f"two connectors leave {c.source} side {c.exit_side}")
            if (ti, c.entry_approach.value) in seen_entry:
                raise ValueError(f"two connectors enter {c.target} side {c.entry_approach}")
            seen_exit.add((si, c.exit_side.value))
            seen_entry.add((ti, c.entry_approach.value))
            tspec = net.intersections[ti]
            dest_lanes = [
                l for l in range(tspec.lane_count)
                if tspec.movement_of_lane[l].approach is c.entry_approach
            ]
            if not dest_lanes:
                raise ValueError(
                    f"connector {c.source}->{c.target}: approach {c.entry_approach} has no lanes"
                )
            rails = []
            cap = max(1, int(c.length // (VEHICLE_LENGTH + self.params.min_gap + 0.7)))
            for dl in dest_lanes:
                s = _Segment(
                    idx=len(segs), name=f"{c.source}->{c.target}:{dl}", kind=_CONN,
                    length=c.length, vmax=net.intersections[si].speed_limit,
                    int_idx=-1, movement=-1, cz_start=math.inf, lane_idx=dl,
                )
                segs.append(s)
                rails.append(s.idx)
                self.conn_dest_lane[s.idx] = self.lane_segs[ti][dl]
                self.conn_cap[s.idx] = cap
            g = len(self.conn_groups)
            self.conn_groups.append({"rails": rails, "target": ti})
            self.exit_group[(si, c.exit_side.value)] = g

        self.segments = segs
        n = len(segs)
        self.seg_len = np.array([s.length for s in segs])
        self.seg_vmax = np.array([s.vmax for s in segs])
        self.seg_kind = np.array([s.kind for s in segs], dtype=np.int8)
        self.seg_int = np.array([s.int_idx for s in segs], dtype=np.int32)
        self.seg_move = np.array([s.movement for s in segs], dtype=np.int8)
        self.seg_cz = np.array([s.cz_start for s in segs])
        self.order: list[list[int]] = [[] for _ in range(n)]
        self.committed = np.zeros(n, dtype=np.int64)  # connector rail reservations

        # feeder segments per connector group, fixed scan order
        self._group_feeder_rails: list[list[int]] = []
        for g, grp in enumerate(self.conn_groups):
            feeders = []
            for (i, side), gg in self.exit_group.items():
                if gg != g:
                    continue
                for lane_seg in self.lane_segs[i]:
                    m = MOVEMENTS[self.seg_move[lane_seg]]
                    if EXIT_SIDE[m].value == side:
                        feeders.append(self.rail_of_lane[lane_seg])
            self._group_feeder_rails.append(sorted(feeders))

        self._cell_paths: list[dict[int, tuple]] = []
        for spec in net.intersections:
            rows, cols = spec.grid_shape
            self._cell_paths.append(
                {m.code: movement_cell_path(m, rows, cols) for m in MOVEMENTS}
            )

    def _build_demand(self) -> None:
        self.demand_specs = [
            DemandSpec(per_lane_rate=s.per_lane_demand, rv_penetration=self.rv_rate,
                       seed=self.seed)
            for s in self.network.intersections
        ]
        self._arrivals: list[np.ndarray] = []
        self._arrival_ptr: list[int] = []
        self._lane_keys: list[tuple[int, int]] = []
        for i, spec in enumerate(self.network.intersections):
            for l in range(spec.lane_count):
                times = demand_mod.arrival_stream(self.demand_specs[i], (i, l), self.horizon)
                self._arrivals.append(times)
                self._arrival_ptr.append(0)
                self._lane_keys.append((i, l))

    def _build_control(self) -> None:
        self.gates = [GateState() for _ in self.network.intersections]
        self.signal_plans: list[SignalPlan | None] = []
        for spec in self.network.intersections:
            if not self.signalized:
                self.signal_plans.append(None)
            elif spec.id in self.network.signal_plans:
                self.signal_plans.append(
                    SignalPlan.build(self.network.signal_plans[spec.id], self.table)
                )
            else:
                self.signal_plans.append(default_signal_plan(self.table))

    def _alloc_vehicles(self, cap: int) -> None:
        self.pos = np.zeros(cap)
        self.speed = np.zeros(cap)
        self.eff_accel = np.zeros(cap)
        self.wait = np.zeros(cap)
        self.cz_time = np.full(cap, np.nan)
        self.spawn_time = np.zeros(cap)
        self.kind = np.zeros(cap, dtype=np.int8)  # 1 = RV
        self.movement = np.full(cap, -1, dtype=np.int8)
        self.seg = np.full(cap, -1, dtype=np.int32)
        self.dest_conn = np.full(cap, -1, dtype=np.int32)
        self.released = np.zeros(cap, dtype=bool)
        self.alive = np.zeros(cap, dtype=bool)
        self.veh_id = np.full(cap, -1, dtype=np.int64)
        self._free = list(range(cap - 1, -1, -1))
        self._id_to_slot: dict[int, int] = {}

    def _grow(self) -> None:
        old = len(self.pos)
        new = old * 2
        for name in ("pos", "speed", "eff_accel", "wait", "cz_time", "spawn_time",
                     "kind", "movement", "seg", "dest_conn", "released", "alive",
                     "veh_id"):
            arr = getattr(self, name)
            grown = np.zeros(new, dtype=arr.dtype)
            if name == "cz_time":
                grown[:] = np.nan
            elif name in ("movement", "seg", "dest_conn", "veh_id"):
                grown[:] = -1
            grown[:old] = arr
            setattr(self, name, grown)
        self._free.extend(range(new - 1, old - 1, -1))

    # ------------------------------------------------------------------
    # vehicle bookkeeping

    def _new_vehicle(self, seg: int, pos: float, speed: float, kind: Kind,
                     movement: int) -> int:
        if not self._free:
            self._grow()
        slot = self._free.pop()
        vid = self._spawn_counter
        self._spawn_counter += 1
        self.pos[slot] = pos
        self.speed[slot] = speed
        self.eff_accel[slot] = 0.0
        self.wait[slot] = 0.0
        self.cz_time[slot] = np.nan
        self.spawn_time[slot] = self.t
        self.kind[slot] = 1 if kind is Kind.RV else 0
        self.movement[slot] = movement
        self.seg[slot] = seg
        self.dest_conn[slot] = -1
        self.released[slot] = False
        self.alive[slot] = True
        self.veh_id[slot] = vid
        self._id_to_slot[vid] = slot
        self.order[seg].append(slot)
        return slot

    def _despawn(self, slot: int) -> None:
        self.alive[slot] = False
        del self._id_to_slot[int(self.veh_id[slot])]
        self.veh_id[slot] = -1
        self.seg[slot] = -1
        self._free.append(slot)

    def active_count(self) -> int:
        return len(self._id_to_slot)

    def vehicle_state(self, vid: int) -> VehicleState:
        s = self._id_to_slot[vid]
        mcode = int(self.movement[s])
        return VehicleState(
            id=vid,
            kind=Kind.RV if self.kind[s] else Kind.HV,
            segment=self.segments[self.seg[s]].name,
            pos=float(self.pos[s]),
            speed=float(self.speed[s]),
            accel=float(self.eff_accel[s]),
            movement=MOVEMENTS[mcode] if mcode >= 0 else None,
            wait=float(self.wait[s]),
            spawn_time=float(self.spawn_time[s]),
        )

    def lane_order(self, seg_idx: int) -> list[VehicleState]:
        """Snapshots of one segment's vehicles, front to back."""
        return [self.vehicle_state(int(self.veh_id[s])) for s in self.order[seg_idx]]

    # ------------------------------------------------------------------
    # queries used by env / policies

    def _queue_head(self, lane_seg: int) -> int | None:
        """Slot of the front-most unreleased vehicle, or None."""
        for slot in self.order[lane_seg]:
            if not self.released[slot]:
                return slot
        return None

    def eligible_rvs(self) -> list[tuple[int, int, Movement]]:
        """(veh_id, intersection index, movement) of every queue-head RV
        currently inside its control zone. Empty under the signal regime."""
        if self.signalized:
            return []
        out = []
        for i, lanes in enumerate(self.lane_segs):
            for lane_seg in lanes:
                h = self._queue_head(lane_seg)
                if h is None or not self.kind[h]:
                    continue
                if self.pos[h] >= self.seg_cz[lane_seg]:
                    out.append((int(self.veh_id[h]), i, MOVEMENTS[self.movement[h]]))
        return out

    def head_states(self, i: int) -> list[dict]:
        """Queue heads in intersection i's control zone, for policies."""
        out = []
        for lane_seg in self.lane_segs[i]:
            h = self._queue_head(lane_seg)
            if h is None or self.pos[h] < self.seg_cz[lane_seg]:
                continue
            out.append({
                "veh_id": int(self.veh_id[h]),
                "kind": Kind.RV if self.kind[h] else Kind.HV,
                "movement": MOVEMENTS[self.movement[h]],
                "cz_time": float(self.cz_time[h]) if not np.isnan(self.cz_time[h]) else self.t,
                "lane": lane_seg,
            })
        return out

    def direction_wait(self, i: int, movement: Movement) -> float:
        """Mean accumulated wait (s) of all vehicles in the control zone of
        intersection i's lanes serving `movement`; 0.0 when empty."""
        total, n = 0.0, 0
        for lane_seg in self.lane_segs[i]:
            if self.seg_move[lane_seg] != movement.code:
                continue
            for slot in self.order[lane_seg]:
                if self.pos[slot] >= self.seg_cz[lane_seg]:
                    total += self.wait[slot]
                    n += 1
        return total / n if n else 0.0

    def cz_rv_stats(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-movement (count, mean wait) of RVs in intersection i's
        control zones; zeros where no RV is present."""
        counts = np.zeros(8)
        sums = np.zeros(8)
        for lane_seg in self.lane_segs[i]:
            mcode = self.seg_move[lane_seg]
            cz = self.seg_cz[lane_seg]
            for slot in self.order[lane_seg]:
                if self.kind[slot] and self.pos[slot] >= cz:
                    counts[mcode] += 1
                    sums[mcode] += self.wait[slot]
        means = np.divide(sums, counts, out=np.zeros(8), where=counts > 0)
        return counts, means

    def grid_shape(self, i: int) -> tuple[int, int]:
        return self.network.intersections[i].grid_shape

    def cell_path(self, i: int, movement: Movement) -> tuple:
        return self._cell_paths[i][movement.code]

    def interior_positions(self, i: int):
        """(movement, fractional progress) for vehicles on i's interior."""
        out = []
        for lane_seg in self.lane_segs[i]:
            rail = self.rail_of_lane[lane_seg]
            length = self.seg_len[rail]
            for slot in self.order[rail]:
                frac = min(max(self.pos[slot] / length, 0.0), 1.0 - 1e-9)
                out.append((MOVEMENTS[self.movement[slot]], frac))
        return out

    def speed_accel_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        idx = self._alive_indices()
        return self.speed[idx], self.eff_accel[idx]

    def _alive_indices(self) -> np.ndarray:
        return np.flatnonzero(self.alive)

    # ------------------------------------------------------------------
    # releases

    def exit_space_free(self, lane_seg: int) -> bool:
        """Whether this lane's movement can currently reserve downstream
        room (always true for exits that leave the network)."""
        return self._space_rail(lane_seg) is not None

    def _space_rail(self, lane_seg: int) -> int | None:
        """Connector rail with a free reservation for this lane's movement,
        or None when every rail is full. Despawn exits return -2 (no
        reservation needed)."""
        i = self.seg_int[lane_seg]
        m = MOVEMENTS[self.seg_move[lane_seg]]
        g = self.exit_group.get((int(i), EXIT_SIDE[m].value))
        if g is None:
            return -2
        rails = self.conn_groups[g]["rails"]
        # free reservation slots exist on any rail: pick at commit time
        for r in rails:
            if self.committed[r] < self.conn_cap[r]:
                return g
        return None

    def _commit(self, slot: int) -> None:
        """Mark one vehicle as released and reserve its downstream slot."""
        lane_seg = int(self.seg[slot])
        i = int(self.seg_int[lane_seg])
        m = MOVEMENTS[self.movement[slot]]
        self.released[slot] = True
        self.gates[i].release(m)
        g = self.exit_group.get((i, EXIT_SIDE[m].value))
        if g is None:
            return
        rails = self.conn_groups[g]["rails"]
        start = demand_mod.route_choice(self.seed, int(self.veh_id[slot]), i, len(rails))
        for k in range(len(rails)):
            r = rails[(start + k) % len(rails)]
            if self.committed[r] < self.conn_cap[r]:
                self.committed[r] += 1
                self.dest_conn[slot] = r
                return
        raise RuntimeError("commit without reservation space; release guard failed")

    def _log_conflict(self, i: int, a: Movement, b: Movement) -> None:
        self.conflict_log.append(
            (self.t, self.network.intersections[i].id, a.label, b.label)
        )

    def _platoon_release(self, lane_seg: int, head_slot: int) -> None:
        """Release trailing HVs behind a released head, up to the next RV,
        control-zone vehicles only, while downstream reservations last."""
        order = self.order[lane_seg]
        idx = order.index(head_slot)
        for slot in order[idx + 1:]:
            if self.kind[slot]:  # next RV ends the platoon
                break
            if self.pos[slot] < self.seg_cz[lane_seg]:
                break
            if self._space_rail(lane_seg) is None:
                break
            self._commit(slot)

    def _apply_rv_actions(self, actions: dict[int, Action]) -> dict[int, tuple[bool, bool]]:
        """Execute Stop/Go for eligible RV heads. Returns per veh_id
        (released, conflict_flag). Raises NotQueueHead for unknown ids."""
        results: dict[int, tuple[bool, bool]] = {}
        eligible = {vid: (i, m) for vid, i, m in self.eligible_rvs()}
        for vid in actions:
            if vid not in eligible:
                raise NotQueueHead(f"vehicle {vid} is not an eligible queue head")
        for vid, (i, m) in eligible.items():
            action = actions.get(vid, Action.STOP)
            released = flag = False
            if action is Action.GO:
                slot = self._id_to_slot[vid]
                lane_seg = int(self.seg[slot])
                other = self.gates[i].first_conflict(m, self.table)
                if other is not None:
                    flag = True
                    self.conflict_flags += 1
                    self._conflict_this_second[i] += 1
                    self._log_conflict(i, m, other)
                elif self._space_rail(lane_seg) is not None:
                    self._commit(slot)
                    self._platoon_release(lane_seg, slot)
                    released = True
            results[vid] = (released, flag)
        return results

    def _auto_releases(self) -> None:
        """Signal-driven releases (all kinds) or HV gap acceptance."""
        for i, lanes in enumerate(self.lane_segs):
            green = None
            if self.signalized:
                green = signal_state(self.signal_plans[i], self.t)
            for lane_seg in lanes:
                h = self._queue_head(lane_seg)
                if h is None or self.pos[h] < self.seg_cz[lane_seg]:
                    continue
                if not self.signalized and self.kind[h]:
                    continue  # RV heads act through the policy
                m = MOVEMENTS[self.movement[h]]
                space = self._space_rail(lane_seg) is not None
                if hv_gate_policy(self.gates[i], green, m, self.table, space_free=space):
                    self._commit(h)

    # ------------------------------------------------------------------
    # dynamics

    def _build_order_concat(self) -> tuple[np.ndarray, np.ndarray]:
        lens = [len(o) for o in self.order]
        total = sum(lens)
        ocat = np.fromiter(
            itertools.chain.from_iterable(self.order), dtype=np.int64, count=total
        )
        bounds = np.zeros(len(lens) + 1, dtype=np.int64)
        np.cumsum(lens, out=bounds[1:])
        return ocat, bounds

    def _chain_leader(self, slot: int, seg_idx: int):
        """Cross-boundary leader for a segment's front vehicle.

        Returns (gap, leader_speed) or None for free road. Follows the
        vehicle's own committed path (lane -> interior -> connector -> next
        lane), at most _LOOKAHEAD meters ahead.
        """
        dist = self.seg_len[seg_idx] - self.pos[slot]
        kind = self.seg_kind[seg_idx]
        path: list[int] = []
        conn = int(self.dest_conn[slot])
        if kind == _LANE:
            path.append(self.rail_of_lane[seg_idx])
        if kind in (_LANE, _RAIL) and conn >= 0:
            path.append(conn)
            path.append(self.conn_dest_lane[conn])
        if kind == _CONN:
            path.append(self.conn_dest_lane[seg_idx])
        for nxt in path:
            if dist >= _LOOKAHEAD:
                return None
            if self.order[nxt]:
                last = self.order[nxt][-1]
                gap = dist + self.pos[last] - VEHICLE_LENGTH
                return (gap, float(self.speed[last])) if gap < _LOOKAHEAD else None
            dist += self.seg_len[nxt]
            if self.seg_kind[nxt] == _LANE:
                break  # beyond an empty downstream lane lies only its stop line
        return None

    def _merge_chains(self, lead_gap, lead_speed, has_lead) -> None:
        """Zipper ordering among vehicles converging on one connector rail."""
        for g, grp in enumerate(self.conn_groups):
            comps: dict[int, list[tuple[float, int]]] = {}
            for rail in self._group_feeder_rails[g]:
                order = self.order[rail]
                if order:
                    h = order[0]
                    r = int(self.dest_conn[h])
                    if r >= 0:
                        comps.setdefault(r, []).append(
                            (float(self.seg_len[rail] - self.pos[h]), h)
                        )
                lane_seg = self.lane_of_rail[rail]
                lorder = self.order[lane_seg]
                if lorder and self.released[lorder[0]] and not order:
                    h = lorder[0]
                    r = int(self.dest_conn[h])
                    if r >= 0:
                        d = float(self.seg_len[lane_seg] - self.pos[h]) + float(self.seg_len[rail])
                        comps.setdefault(r, []).append((d, h))
            for r, lst in comps.items():
                if len(lst) < 2:
                    continue
                lst.sort(key=lambda e: (e[0], self.veh_id[e[1]]))
                for (d_prev, prev), (d_cur, cur) in zip(lst, lst[1:]):
                    gap = max(d_cur - d_prev - VEHICLE_LENGTH, _MERGE_MIN_GAP)
                    if not has_lead[cur] or gap < lead_gap[cur]:
                        lead_gap[cur] = gap
                        lead_speed[cur] = self.speed[prev]
                        has_lead[cur] = True

    def _step_dynamics(self) -> None:
        ocat, bounds = self._build_order_concat()
        n_cap = len(self.pos)
        lead_gap = np.full(n_cap, np.inf)
        lead_speed = np.zeros(n_cap)
        has_lead = np.zeros(n_cap, dtype=bool)

        if len(ocat):
            heads = bounds[:-1][bounds[:-1] < bounds[1:]]  # start offset of non-empty segs
            head_mask = np.zeros(len(ocat), dtype=bool)
            head_mask[heads] = True
            foll = ~head_mask
            tgt = ocat[foll]
            shifted = np.empty_like(ocat)
            shifted[1:] = ocat[:-1]
            src = shifted[foll]
            lead_gap[tgt] = self.pos[src] - VEHICLE_LENGTH - self.pos[tgt]
            lead_speed[tgt] = self.speed[src]
            has_lead[tgt] = True

            for k in heads:
                slot = int(ocat[k])
                seg_idx = int(self.seg[slot])
                if self.seg_kind[seg_idx] == _LANE and not self.released[slot]:
                    gap = max(self.seg_len[seg_idx] - self.pos[slot], 0.05)
                    lead_gap[slot] = gap
                    lead_speed[slot] = 0.0
                    has_lead[slot] = True
                else:
                    chained = self._chain_leader(slot, seg_idx)
                    if chained is not None:
                        lead_gap[slot], lead_speed[slot] = chained
                        lead_gap[slot] = max(lead_gap[slot], _MERGE_MIN_GAP)
                        has_lead[slot] = True

            self._merge_chains(lead_gap, lead_speed, has_lead)

        idx = self._alive_indices()
        if len(idx):
            v = self.speed[idx]
            accel = idm_acceleration_arrays(
                v, lead_speed[idx], lead_gap[idx], has_lead[idx],
                self.seg_vmax[self.seg[idx]], self.params,
            )
            v_new = np.maximum(v + accel * self.dt, 0.0)
            self.eff_accel[idx] = (v_new - v) / self.dt
            self.speed[idx] = v_new
            self.pos[idx] += v_new * self.dt
            self.wait[idx] += self.dt * (v_new < WAIT_SPEED_THRESHOLD)

            # stop-line clamp for gated vehicles (IDM keeps them ~min_gap short;
            # this is a numerical backstop, not a control device)
            seg_i = self.seg[idx]
            gated = (self.seg_kind[seg_i] == _LANE) & ~self.released[idx]
            limit = self.seg_len[seg_i] - _WALL_EPS
            over = gated & (self.pos[idx] > limit)
            if over.any():
                oi = idx[over]
                self.pos[oi] = limit[over]
                self.speed[oi] = 0.0

        # collision invariant: bumper-to-bumper gaps stay positive
        if len(ocat):
            head_mask = np.zeros(len(ocat), dtype=bool)
            head_mask[bounds[:-1][bounds[:-1] < bounds[1:]]] = True
            foll = ~head_mask
            tgt = ocat[foll]
            shifted = np.empty_like(ocat)
            shifted[1:] = ocat[:-1]
            src = shifted[foll]
            gaps = self.pos[src] - VEHICLE_LENGTH - self.pos[tgt]
            bad = np.flatnonzero(gaps <= 0)
            if len(bad):
                b = bad[0]
                raise CollisionError(
                    f"t={self.t + self.dt:.1f}s: gap {gaps[b]:.3f} m between vehicles "
                    f"{int(self.veh_id[src[b]])} and {int(self.veh_id[tgt[b]])} "
                    f"on {self.segments[int(self.seg[tgt[b]])].name}"
                )

    # ------------------------------------------------------------------
    # transfers and spawns

    def _insert_behind(self, slot: int, target: int, overshoot: float) -> bool:
        """Append a vehicle to a segment's back, preserving gaps.

        Returns False when there is no room at the entry (caller holds the
        vehicle at its source segment's end)."""
        order = self.order[target]
        newpos = overshoot
        if order:
            last = order[-1]
            max_pos = self.pos[last] - VEHICLE_LENGTH - _MERGE_MIN_GAP
            if max_pos < 0.0:
                return False
            if newpos > max_pos:
                newpos = max_pos
                self.speed[slot] = min(self.speed[slot], self.speed[last])
        self.pos[slot] = newpos
        self.seg[slot] = target
        order.append(slot)
        return True

    def _hold_at_end(self, slot: int, seg_idx: int) -> None:
        self.pos[slot] = self.seg_len[seg_idx] - _WALL_EPS
        self.speed[slot] = 0.0

    def _do_transfers(self) -> None:
        idx = self._alive_indices()
        if not len(idx):
            return
        done = idx[self.pos[idx] >= self.seg_len[self.seg[idx]]]
        if not len(done):
            return
        segs_hit = sorted(set(int(self.seg[s]) for s in done),
                          key=lambda s: (-self.seg_kind[s], s))
        for seg_idx in segs_hit:  # connectors first, then rails, then lanes
            order = self.order[seg_idx]
            while order and self.pos[order[0]] >= self.seg_len[seg_idx]:
                slot = order[0]
                overshoot = float(self.pos[slot] - self.seg_len[seg_idx])
                kind = self.seg_kind[seg_idx]
                if kind == _LANE:
                    rail = self.rail_of_lane[seg_idx]
                    order.pop(0)
                    if not self._insert_behind(slot, rail, overshoot):
                        order.insert(0, slot)
                        self._hold_at_end(slot, seg_idx)
                        break
                elif kind == _RAIL:
                    i = int(self.seg_int[seg_idx])
                    m = MOVEMENTS[self.movement[slot]]
                    conn = int(self.dest_conn[slot])
                    if conn < 0:
                        order.pop(0)
                        self.gates[i].complete(m)
                        self.crossed[i] += 1
                        self._despawn(slot)
                        continue
                    order.pop(0)
                    if self._insert_behind(slot, conn, overshoot):
                        self.gates[i].complete(m)
                        self.crossed[i] += 1
                    else:
                        order.insert(0, slot)
                        self._hold_at_end(slot, seg_idx)
                        break
                else:  # connector -> next intersection's approach lane
                    dest = self.conn_dest_lane[seg_idx]
                    order.pop(0)
                    if self._insert_behind(slot, dest, overshoot):
                        self.committed[seg_idx] -= 1
                        self.dest_conn[slot] = -1
                        self.released[slot] = False
                        self.movement[slot] = self.seg_move[dest]
                        self.cz_time[slot] = np.nan
                    else:
                        order.insert(0, slot)
                        self._hold_at_end(slot, seg_idx)
                        break

    def _do_spawns(self) -> None:
        t_new = self.t + self.dt
        k = 0
        for i, spec_lanes in enumerate(self.lane_segs):
            dspec = self.demand_specs[i]
            ispec = self.network.intersections[i]
            for l, lane_seg in enumerate(spec_lanes):
                times = self._arrivals[k]
                ptr = self._arrival_ptr[k]
                while ptr < len(times) and times[ptr] <= t_new:
                    order = self.order[lane_seg]
                    v_spawn = self.seg_vmax[lane_seg]
                    if order:
                        last = order[-1]
                        entry_gap = self.pos[last] - VEHICLE_LENGTH
                        if entry_gap < self.params.min_gap + _ENTRY_CLEARANCE:
                            n_due = int(np.searchsorted(times, t_new, side="right")) - ptr
                            self.deferred_seconds += n_due * self.dt
                            break
                        v_spawn = min(
                            v_spawn,
                            self.speed[last]
                            + max(0.0, entry_gap - self.params.min_gap)
                            / self.params.time_headway,
                        )
                    kind = demand_mod.assign_kind(dspec, self._spawn_counter)
                    self._new_vehicle(
                        lane_seg, 0.0, float(v_spawn), kind,
                        ispec.movement_of_lane[l].code,
                    )
                    ptr += 1
                self._arrival_ptr[k] = ptr
                k += 1

    # ------------------------------------------------------------------
    # metrics

    def _scope_masks(self, idx: np.ndarray) -> list[np.ndarray]:
        seg_i = self.seg[idx]
        kinds = self.seg_kind[seg_i]
        ints = self.seg_int[seg_i]
        in_cz = (kinds == _LANE) & (self.pos[idx] >= self.seg_cz[seg_i])
        on_rail = kinds == _RAIL
        masks = []
        for i in range(len(self.network.intersections)):
            masks.append((ints == i) & (in_cz | on_rail))
        masks.append(np.ones(len(idx), dtype=bool))
        return masks

    def _record_metrics(self) -> None:
        idx = self._alive_indices()
        masks = self._scope_masks(idx) if len(idx) else None
        v = self.speed[idx]
        a = self.eff_accel[idx]
        poly = {p: emission_rate(self.coeffs, p, v, a) for p in POLLUTANTS}

        n_scopes = len(self.scope_names)
        for s in range(n_scopes):
            if masks is None:
                n = 0
            else:
                m = masks[s]
                n = int(m.sum())
            self._bucket_sums[s, 0] += n
            self._bucket_counts[s, 0] += 1
            conf = self._conflict_this_tick_scope(s)
            self._bucket_sums[s, 3] += conf
            self._bucket_counts[s, 3] += 1
            if n == 0:
                continue
            self._bucket_sums[s, 1] += float(self.wait[idx][m].mean())
            self._bucket_counts[s, 1] += 1
            self._bucket_sums[s, 2] += float(a[m].mean())
            self._bucket_counts[s, 2] += 1
            for j, p in enumerate(POLLUTANTS):
                self._bucket_sums[s, 4 + j] += float(poly[p][m].mean())
                self._bucket_counts[s, 4 + j] += 1

        t_next = self.t + self.dt
        if abs(t_next - round(t_next)) < 1e-9:
            frame_idx = int(round(t_next)) - 1
            if 0 <= frame_idx < len(self.frames):
                with np.errstate(invalid="ignore"):
                    vals = np.where(
                        self._bucket_counts > 0,
                        self._bucket_sums / np.maximum(self._bucket_counts, 1),
                        np.nan,
                    )
                # conflicts are a count per second, not a mean
                vals[:, 3] = self._bucket_sums[:, 3]
                self.frames[frame_idx] = vals
            self._bucket_sums[:] = 0.0
            self._bucket_counts[:] = 0.0

    def _conflict_this_tick_scope(self, s: int) -> float:
        if s < len(self._conflict_this_second):
            return self._conflict_this_second[s]
        return float(sum(self._conflict_this_second))

    def _write_trajectories(self) -> None:
        w = self.trajectory_writer
        for vid in sorted(self._id_to_slot):
            s = self._id_to_slot[vid]
            seg = self.segments[int(self.seg[s])]
            mcode = int(self.movement[s])
            w.writerow([
                f"{self.t:.1f}", vid, "RV" if self.kind[s] else "HV",
                self.network.intersections[seg.int_idx].id if seg.int_idx >= 0 else "-",
                seg.name, f"{self.pos[s]:.3f}", f"{self.speed[s]:.3f}",
                f"{self.eff_accel[s]:.3f}",
                MOVEMENTS[mcode].label if mcode >= 0 else "-",
            ])

    # ------------------------------------------------------------------
    # the tick

    def tick(self, actions: dict[int, Action] | None = None) -> dict[int, tuple[bool, bool]]:
        """Advance one dt step. `actions` maps eligible RV ids to Stop/Go;
        missing eligible RVs implicitly Stop. Returns per-commanded-RV
        (released, conflict_flag)."""
        self._conflict_this_second = [0] * len(self.network.intersections)
        results: dict[int, tuple[bool, bool]] = {}
        if not self.signalized:
            results = self._apply_rv_actions(actions or {})
        elif actions:
            raise NotQueueHead("RV actions are not accepted under the signal regime")
        self._auto_releases()

        for i, gate in enumerate(self.gates):
            bad = gate.violations(self.table)
            for a, b in bad:
                self.monitor_violations += 1
                self._log_conflict(i, a, b)

        self._step_dynamics()
        self._do_transfers()
        self._do_spawns()

        idx = self._alive_indices()
        if len(idx):
            seg_i = self.seg[idx]
            fresh = (
                np.isnan(self.cz_time[idx])
                & (self.seg_kind[seg_i] == _LANE)
                & (self.pos[idx] >= self.seg_cz[seg_i])
            )
            self.cz_time[idx[fresh]] = self.t + self.dt

        if self.record_metrics:
            self._record_metrics()
        if self.trajectory_writer is not None:
            self._write_trajectories()
        self.t += self.dt
        return results

    def step_vehicles(self, dt: float | None = None) -> list[tuple[int, float, float]]:
        """Dynamics-only view of one tick: advances the world (with empty
        actions) and returns (veh_id, speed, effective accel) records."""
        if dt is not None and abs(dt - self.dt) > 1e-12:
            raise ValueError("a World steps at its configured dt")
        self.tick({})
        records = []
        for vid in sorted(self._id_to_slot):
            s = self._id_to_slot[vid]
            records.append((vid, float(self.speed[s]), float(self.eff_accel[s])))
        return records
