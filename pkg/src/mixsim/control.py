"""Intersection control: fixed-time signals, Stop/Go gating, occupancy map.

The gate tracks a multiset of "active" movements. A movement becomes active
the moment a vehicle is committed to cross (released at the stop line) and
stays active until that vehicle finishes the interior path. Conflict checks
run against this multiset, so two conflicting releases a tick apart cannot
both slip through while the first vehicle is still short of the interior.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .topology import ConflictTable, Movement

DEFAULT_WAIT_NORMALIZER = 120.0  # s, scales wait times into [0, 1]


class Action(enum.Enum):
    STOP = "Stop"
    GO = "Go"

    @classmethod
    def parse(cls, text: str) -> "Action":
        t = str(text).strip().lower()
        if t == "stop":
            return cls.STOP
        if t == "go":
            return cls.GO
        raise ValueError(f"unknown action {text!r}; expected 'Stop' or 'Go'")


class SignalPlanError(ValueError):
    pass


@dataclass(frozen=True)
class SignalPlan:
    """Fixed-time plan: ordered phases of (green movements, green s, yellow s)."""

    phases: tuple[tuple[frozenset[Movement], float, float], ...]
    offset: float = 0.0

    @property
    def cycle(self) -> float:
        return sum(g + y for _, g, y in self.phases)

    @classmethod
    def build(cls, phases, table: ConflictTable, offset: float = 0.0) -> "SignalPlan":
        """Validating constructor: rejects conflicting greens within a phase."""
        norm = []
        for movs, green, yellow in phases:
            movset = frozenset(m if isinstance(m, Movement) else Movement.parse(m) for m in movs)
            if green <= 0 or yellow <= 0:
                raise SignalPlanError(f"phase {sorted(str(m) for m in movset)}: durations must be positive")
            for a in movset:
                for b in movset:
                    if table.conflicts(a, b):
                        raise SignalPlanError(
                            f"phase greens {a} and {b} conflict; plan rejected"
                        )
            norm.append((movset, float(green), float(yellow)))
        if not norm:
            raise SignalPlanError("a signal plan needs at least one phase")
        return cls(phases=tuple(norm), offset=float(offset))


def default_signal_plan(table: ConflictTable) -> SignalPlan:
    """Protected-left four-phase plan: 30 s through greens, 10 s left greens,
    3 s yellow after each. 92 s cycle."""
    return SignalPlan.build(
        [
            (("N-S", "S-S"), 30.0, 3.0),
            (("N-L", "S-L"), 10.0, 3.0),
            (("E-S", "W-S"), 30.0, 3.0),
            (("E-L", "W-L"), 10.0, 3.0),
        ],
        table,
    )


def signal_state(plan: SignalPlan, t: float) -> frozenset[Movement]:
    """Movements with green at time t; yellow counts as not green."""
    if t < 0:
        raise ValueError("t must be >= 0")
    tau = (t - plan.offset) % plan.cycle
    start = 0.0
    for movs, green, yellow in plan.phases:
        if start <= tau < start + green:
            return movs
        start += green + yellow
    return frozenset()


@dataclass
class GateState:
    """Commitment bookkeeping for one intersection's interior."""

    active: Counter = field(default_factory=Counter)

    def first_conflict(self, m: Movement, table: ConflictTable) -> Movement | None:
        for other, n in self.active.items():
            if n > 0 and table.conflicts(m, other):
                return other
        return None

    def release(self, m: Movement) -> None:
        self.active[m] += 1

    def complete(self, m: Movement) -> None:
        if self.active[m] <= 0:
            raise RuntimeError(f"gate completion for {m} without matching release")
        self.active[m] -= 1
        if self.active[m] == 0:
            del self.active[m]

    def movements(self) -> list[Movement]:
        return [m for m, n in self.active.items() if n > 0]

    def violations(self, table: ConflictTable) -> list[tuple[Movement, Movement]]:
        """Conflicting pairs currently active together (should stay empty)."""
        movs = self.movements()
        out = []
        for i, a in enumerate(movs):
            for b in movs[i + 1:]:
                if table.conflicts(a, b):
                    out.append((a, b))
        return out


def apply_action(gate: GateState, movement: Movement, action: Action,
                 table: ConflictTable, space_free: bool = True):
    """Execute one Stop/Go command for a queue-head vehicle.

    Returns (released, conflict_flag, conflicting_movement). Stop never
    releases. A Go whose movement conflicts with an active movement raises
    the conflict flag and the release is suppressed - the simulator records
    the violation instead of animating a collision. A conflict-free Go with
    no downstream space is deferred (no release, no flag).
    """
    if action is Action.STOP:
        return False, False, None
    other = gate.first_conflict(movement, table)
    if other is not None:
        return False, True, other
    if not space_free:
        return False, False, None
    gate.release(movement)
    return True, False, None


def hv_gate_policy(gate: GateState, green: frozenset[Movement] | None,
                   movement: Movement, table: ConflictTable,
                   space_free: bool = True) -> bool:
    """Release rule for an uncontrolled queue head.

    Signalized: requires green for the movement and, as a clearance rule, no
    conflicting movement still active (vehicles committed in a previous
    phase finish crossing first). Unsignalized: gap acceptance - release
    exactly when no active movement conflicts. Both defer when the exit
    path has no room.
    """
    if not space_free:
        return False
    if green is not None and movement not in green:
        return False
    return gate.first_conflict(movement, table) is None


def movement_cell_path(movement: Movement, rows: int, cols: int) -> tuple[tuple[int, int], ...]:
    """Cell sequence a movement traverses on the interior occupancy grid.

    Approaches enter on mid lines (right-hand traffic): southbound runs down
    column cols//2-1, northbound up column cols//2, eastbound along row
    rows//2, westbound along row rows//2-1. Straight movements cross the
    full grid; lefts follow their entry line to the center then leave along
    the exit direction's line.
    """
    if rows < 2 or cols < 2:
        raise ValueError("grid must be at least 2x2")
    sb_col, nb_col = cols // 2 - 1, cols // 2
    wb_row, eb_row = rows // 2 - 1, rows // 2

    down = [(r, sb_col) for r in range(rows)]                 # N entry, heading south
    up = [(r, nb_col) for r in range(rows - 1, -1, -1)]       # S entry, heading north
    west = [(wb_row, c) for c in range(cols - 1, -1, -1)]     # E entry, heading west
    east = [(eb_row, c) for c in range(cols)]                 # W entry, heading east

    if movement is Movement.N_S:
        return tuple(down)
    if movement is Movement.S_S:
        return tuple(up)
    if movement is Movement.E_S:
        return tuple(west)
    if movement is Movement.W_S:
        return tuple(east)
    if movement is Movement.N_L:  # south then east
        return tuple(down[: rows // 2] + [(eb_row, c) for c in range(cols // 2, cols)])
    if movement is Movement.S_L:  # north then west
        return tuple(up[: rows // 2] + [(wb_row, c) for c in range(cols // 2 - 1, -1, -1)])
    if movement is Movement.E_L:  # west then south
        return tuple(west[: cols // 2] + [(r, sb_col) for r in range(rows // 2, rows)])
    if movement is Movement.W_L:  # east then north
        return tuple(east[: cols // 2] + [(r, nb_col) for r in range(rows // 2 - 1, -1, -1)])
    raise ValueError(f"unknown movement {movement}")


@dataclass
class OccupancyGrid:
    rows: int
    cols: int
    cells: np.ndarray  # bool, shape (rows, cols)

    def flatten(self) -> np.ndarray:
        return self.cells.astype(np.float64).ravel()


def build_occupancy(world, intersection_index: int) -> OccupancyGrid:
    """Occupancy grid of one intersection's interior.

    Every vehicle on an interior path marks the cell at
    floor(progress * path length), progress being pos / path length in
    [0, 1). Cells with no vehicle stay false.
    """
    rows, cols = world.grid_shape(intersection_index)
    cells = np.zeros((rows, cols), dtype=bool)
    for movement, frac in world.interior_positions(intersection_index):
        path = world.cell_path(intersection_index, movement)
        idx = min(int(frac * len(path)), len(path) - 1)
        cells[path[idx]] = True
    return OccupancyGrid(rows=rows, cols=cols, cells=cells)
