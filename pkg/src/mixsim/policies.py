"""Built-in controllers and the plug-in seam for external policies.

Three kinds ship:

* ``signal`` — the fixed-time baseline. Not an RV policy at all: the world
  runs in the signalized regime and every queue head follows the lights.
* ``fcfs`` — a first-come-first-served reservation heuristic with greedy
  batching over RV queue heads, the stand-in for a trained policy. Heads
  are scanned in order of control-zone arrival and granted whenever their
  movement is compatible with everything active or already granted, so
  same-direction streams pipeline. A head denied past its patience starts
  blocking the streams that overtake it, which bounds every movement's
  service interval. Heads whose exit lane or connector is full are
  skipped without blocking others.
* ``external`` — Stop/Go decisions fetched over the wire protocol from a
  policy server (see PROTOCOL.md).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .control import Action
from .topology import ConflictTable, Movement
from .world import World

POLICY_KINDS = ("signal", "fcfs", "external")


@dataclass(frozen=True)
class PolicyHandle:
    kind: str
    endpoint: str | None = None  # external only, "host:port"
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")
        if self.kind == "external" and not self.endpoint:
            raise ValueError("external policy requires an endpoint")

    @classmethod
    def parse(cls, text: str) -> "PolicyHandle":
        """CLI form: 'signal', 'fcfs', or 'external:HOST:PORT'."""
        if text in ("signal", "fcfs"):
            return cls(kind=text)
        if text.startswith("external:"):
            return cls(kind="external", endpoint=text[len("external:"):])
        raise ValueError(f"unknown policy {text!r}")


#: Seconds a denied queue head may wait before it starts blocking the
#: batches that overtake it. Comparable to a signal phase length; small
#: values rotate service faster, large values batch harder.
DEFAULT_PATIENCE = 25.0


def fcfs_decide(
    heads: list[dict],
    active: list[Movement],
    table: ConflictTable,
    space_free: Callable[[dict], bool] | None = None,
    now: float = 0.0,
    patience: float = DEFAULT_PATIENCE,
) -> dict[int, Action]:
    """First-come-first-served Stop/Go over the current RV queue heads.

    heads: dicts with veh_id, movement, cz_time (control-zone arrival),
    as produced by World.head_states, RV entries only. Heads are scanned
    in arrival order and granted Go when their movement is pairwise
    non-conflicting with every active movement and every movement granted
    earlier in the scan, so compatible movements batch greedily and a
    moving stream keeps flowing.

    Unbounded batching starves crossing traffic under saturation, so a
    denied head that has already been held at the stop line for at least
    `patience` seconds (the optional per-head "head_wait" field, falling
    back to time since control-zone arrival) adds its movement to a
    barrier: later grants must also clear the barrier, which dries up the
    streams the aged head is waiting on. Every movement is therefore
    served within a bounded rotation. A head whose exit has no room is
    skipped outright (Stop, no barrier entry): it could not use a grant,
    and letting it hold the box would starve every crossing movement. It
    keeps its queue position, so it is served first once its exit drains.
    """
    decisions: dict[int, Action] = {}
    granted: list[Movement] = []
    barrier: list[Movement] = []
    ordered = sorted(heads, key=lambda h: (h["cz_time"], h["veh_id"]))
    for h in ordered:
        m = h["movement"]
        if space_free is not None and not space_free(h):
            decisions[h["veh_id"]] = Action.STOP
            continue
        blocked = any(table.conflicts(m, o) for o in active)
        blocked = blocked or any(table.conflicts(m, o) for o in granted)
        blocked = blocked or any(table.conflicts(m, o) for o in barrier)
        if blocked:
            decisions[h["veh_id"]] = Action.STOP
            if h.get("head_wait", now - h["cz_time"]) >= patience:
                barrier.append(m)
        else:
            decisions[h["veh_id"]] = Action.GO
            granted.append(m)
    return decisions


class FcfsPolicy:
    """World-side adapter running fcfs_decide each decision tick.

    Tracks when each queue head was first denied so the patience clock
    measures actual hold time at the stop line, not queue age; at
    saturation every vehicle has queued for ages and aging by arrival
    would disable batching entirely.
    """

    def __init__(self, patience: float = DEFAULT_PATIENCE):
        self.patience = patience
        self._denied_since: dict[int, float] = {}

    def decide(self, world: World) -> dict[int, Action]:
        out: dict[int, Action] = {}
        now = world.t
        seen: set[int] = set()
        for i in range(len(world.network.intersections)):
            heads = [h for h in world.head_states(i) if h["kind"].value == "RV"]
            if not heads:
                continue
            for h in heads:
                seen.add(h["veh_id"])
                first = self._denied_since.get(h["veh_id"])
                h["head_wait"] = 0.0 if first is None else now - first
            decisions = fcfs_decide(
                heads,
                world.gates[i].movements(),
                world.table,
                space_free=lambda h: world.exit_space_free(h["lane"]),
                now=now,
                patience=self.patience,
            )
            for vid, act in decisions.items():
                if act is Action.STOP:
                    self._denied_since.setdefault(vid, now)
                else:
                    self._denied_since.pop(vid, None)
            out.update(decisions)
        for vid in [v for v in self._denied_since if v not in seen]:
            del self._denied_since[vid]
        return out


class AllStopPolicy:
    """Never releases anything; the trivial lower-bound policy."""

    def decide(self, world: World) -> dict[int, Action]:
        return {vid: Action.STOP for vid, _i, _m in world.eligible_rvs()}


class ExternalPolicy:
    """Fetches decisions from a remote policy server per decision tick.

    Vehicles the server does not answer for default to Stop. Timeouts and
    malformed replies raise ProtocolError (the episode is failed, not
    silently continued).
    """

    def __init__(self, endpoint: str, timeout: float = 5.0):
        from .protocol import PolicyClient  # local import to avoid a cycle

        self._client = PolicyClient(endpoint, timeout=timeout)
        self._hello_sent = False

    def start(self, obs_dim: int) -> None:
        self._client.hello(obs_dim)
        self._hello_sent = True

    def decide_from_observations(self, t: float, observations: dict[int, "object"]) -> dict[int, Action]:
        if not self._hello_sent:
            raise RuntimeError("start() must run before decisions are requested")
        raw = self._client.decide(t, observations)
        out: dict[int, Action] = {}
        for vid in observations:
            out[vid] = Action.parse(raw[vid]) if vid in raw else Action.STOP
        return out

    def close(self) -> None:
        self._client.close()
