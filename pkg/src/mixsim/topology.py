"""Intersection topology: movements, the conflict relation, and scenario files.

The simulated world is a chain or grid of four-way intersections. Each
intersection owns a set of incoming lanes (1-D segments), every lane is
dedicated to exactly one movement (approach x maneuver), and the interior
of the intersection is abstracted to one traversal path per lane whose
length depends on the maneuver. Connectors join an exit side of one
intersection to an entry approach of another.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path


class Approach(enum.Enum):
    NORTH = "N"
    EAST = "E"
    SOUTH = "S"
    WEST = "W"

    def __str__(self) -> str:
        return self.value


class Maneuver(enum.Enum):
    STRAIGHT = "S"
    LEFT = "L"

    def __str__(self) -> str:
        return self.value


class Movement(enum.Enum):
    """One of the eight permitted (approach, maneuver) pairs.

    Right turns are intentionally not representable.
    """

    N_S = ("N", "S")
    N_L = ("N", "L")
    E_S = ("E", "S")
    E_L = ("E", "L")
    S_S = ("S", "S")
    S_L = ("S", "L")
    W_S = ("W", "S")
    W_L = ("W", "L")

    @property
    def approach(self) -> Approach:
        return Approach(self.value[0])

    @property
    def maneuver(self) -> Maneuver:
        return Maneuver(self.value[1])

    @property
    def code(self) -> int:
        """Stable small-int id, in declaration order (N-S=0 .. W-L=7)."""
        return _MOVEMENT_CODES[self]

    @property
    def label(self) -> str:
        return f"{self.value[0]}-{self.value[1]}"

    def __str__(self) -> str:
        return self.label

    @classmethod
    def parse(cls, text: str) -> "Movement":
        """Parse labels like ``N-S``, ``w-l`` or ``NL``."""
        t = text.strip().upper().replace("-", "").replace("_", "")
        for m in cls:
            if m.value[0] + m.value[1] == t:
                return m
        raise ValueError(f"unknown movement {text!r}")


MOVEMENTS: tuple[Movement, ...] = tuple(Movement)
_MOVEMENT_CODES = {m: i for i, m in enumerate(MOVEMENTS)}

#: Side of the intersection a movement exits through (right-hand traffic).
EXIT_SIDE: dict[Movement, Approach] = {
    Movement.N_S: Approach.SOUTH,
    Movement.N_L: Approach.EAST,
    Movement.E_S: Approach.WEST,
    Movement.E_L: Approach.SOUTH,
    Movement.S_S: Approach.NORTH,
    Movement.S_L: Approach.WEST,
    Movement.W_S: Approach.EAST,
    Movement.W_L: Approach.NORTH,
}


@dataclass(frozen=True)
class ConflictTable:
    """Symmetric relation of movement pairs that may share the interior."""

    non_conflicting_pairs: frozenset[frozenset[Movement]]

    def conflicts(self, a: Movement, b: Movement) -> bool:
        if a is b:
            return False
        return frozenset((a, b)) not in self.non_conflicting_pairs

    def as_matrix(self) -> list[list[bool]]:
        """8x8 conflict matrix indexed by Movement.code."""
        return [[self.conflicts(a, b) for b in MOVEMENTS] for a in MOVEMENTS]


_DEFAULT_PAIRS = (
    (Movement.N_S, Movement.N_L),
    (Movement.E_S, Movement.E_L),
    (Movement.E_L, Movement.W_L),
    (Movement.S_S, Movement.N_S),
    (Movement.S_L, Movement.N_L),
    (Movement.S_S, Movement.S_L),
    (Movement.W_S, Movement.E_S),
    (Movement.W_S, Movement.W_L),
)


def default_conflict_table() -> ConflictTable:
    """The stock compatibility table for a four-way junction without right turns.

    Eight cross-movement pairs (each approach's own straight+left, the two
    opposing straight pairs, and the two opposing left pairs) plus the
    reflexive pairs are non-conflicting; the remaining 20 unordered pairs
    conflict.
    """
    pairs = {frozenset(p) for p in _DEFAULT_PAIRS}
    pairs.update(frozenset((m,)) for m in MOVEMENTS)
    return ConflictTable(non_conflicting_pairs=frozenset(pairs))


def conflicts(a: Movement, b: Movement, table: ConflictTable) -> bool:
    """True iff movements a and b may not occupy the interior together."""
    return table.conflicts(a, b)


class ScenarioError(ValueError):
    """Raised for malformed or inconsistent scenario files."""


@dataclass(frozen=True)
class IntersectionSpec:
    id: str
    lane_count: int
    lane_length: float
    speed_limit: float
    control_zone_length: float
    per_lane_demand: float  # veh/hour for every incoming lane
    movement_of_lane: tuple[Movement, ...]  # index = lane number
    interior_length: dict[Maneuver, float]
    grid_shape: tuple[int, int]

    def __post_init__(self) -> None:
        if self.control_zone_length <= 0 or self.control_zone_length > self.lane_length:
            raise ScenarioError(
                f"intersection {self.id}: control_zone must be in (0, lane_length], "
                f"got {self.control_zone_length}"
            )
        if len(self.movement_of_lane) != self.lane_count:
            missing = self.lane_count - len(self.movement_of_lane)
            raise ScenarioError(
                f"intersection {self.id}: {self.lane_count} lanes declared but "
                f"{len(self.movement_of_lane)} mapped ({missing:+d} unmapped)"
            )
        if self.lane_count <= 0:
            raise ScenarioError(f"intersection {self.id}: lanes must be positive")
        if self.speed_limit <= 0 or self.lane_length <= 0:
            raise ScenarioError(f"intersection {self.id}: lengths and speeds must be positive")
        if self.per_lane_demand <= 0:
            raise ScenarioError(f"intersection {self.id}: demand must be positive")

    def lanes_of_movement(self, m: Movement) -> list[int]:
        return [i for i, mv in enumerate(self.movement_of_lane) if mv is m]

    def interior_length_of(self, m: Movement) -> float:
        return self.interior_length[m.maneuver]


@dataclass(frozen=True)
class Connector:
    source: str
    exit_side: Approach
    target: str
    entry_approach: Approach
    length: float


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    intersections: tuple[IntersectionSpec, ...]
    connectors: tuple[Connector, ...]
    signal_plans: dict[str, list[tuple[tuple[str, ...], float, float]]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = [s.id for s in self.intersections]
        if len(set(ids)) != len(ids):
            raise ScenarioError(f"duplicate intersection ids: {ids}")
        for c in self.connectors:
            if c.source not in ids:
                raise ScenarioError(f"connector references unknown intersection {c.source!r}")
            if c.target not in ids:
                raise ScenarioError(f"connector references unknown intersection {c.target!r}")
            if c.length <= 0:
                raise ScenarioError(f"connector {c.source}->{c.target}: length must be positive")

    def intersection(self, iid: str) -> IntersectionSpec:
        for s in self.intersections:
            if s.id == iid:
                return s
        raise KeyError(iid)


def default_lane_split(total: int) -> dict[Approach, int]:
    """Split a lane total across the four approaches, remainder north-first."""
    order = (Approach.NORTH, Approach.EAST, Approach.SOUTH, Approach.WEST)
    base, rem = divmod(total, 4)
    return {a: base + (1 if i < rem else 0) for i, a in enumerate(order)}


def default_movements(split: dict[Approach, int]) -> tuple[Movement, ...]:
    """Per-approach default mapping: last lane turns left, the rest go straight."""
    out: list[Movement] = []
    for a in (Approach.NORTH, Approach.EAST, Approach.SOUTH, Approach.WEST):
        n = split.get(a, 0)
        for k in range(n):
            man = Maneuver.LEFT if k == n - 1 else Maneuver.STRAIGHT
            out.append(Movement.parse(f"{a.value}-{man.value}"))
    return tuple(out)


_SECTION_RE = re.compile(r"^\[(?P<name>[^\]]+)\]\s*$")


def _parse_sections(text: str, origin: str) -> list[tuple[str, dict[str, str], int]]:
    """Split a scenario document into (section name, fields, line no) triples."""
    sections: list[tuple[str, dict[str, str], int]] = []
    current: dict[str, str] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION_RE.match(line)
        if m:
            current = {}
            sections.append((m.group("name").strip(), current, lineno))
            continue
        if "=" not in line:
            raise ScenarioError(f"{origin}:{lineno}: expected 'key = value', got {line!r}")
        if current is None:
            raise ScenarioError(f"{origin}:{lineno}: field outside any [section]")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in current:
            raise ScenarioError(f"{origin}:{lineno}: duplicate field {key!r}")
        current[key] = value.strip()
    return sections


def _take_float(fields: dict[str, str], key: str, origin: str, default: float | None = None) -> float:
    if key not in fields:
        if default is None:
            raise ScenarioError(f"{origin}: missing required field {key!r}")
        return default
    try:
        return float(fields.pop(key))
    except ValueError as exc:
        raise ScenarioError(f"{origin}: field {key!r} is not a number") from exc


def _take_int(fields: dict[str, str], key: str, origin: str, default: int | None = None) -> int:
    if key not in fields:
        if default is None:
            raise ScenarioError(f"{origin}: missing required field {key!r}")
        return default
    try:
        return int(fields.pop(key))
    except ValueError as exc:
        raise ScenarioError(f"{origin}: field {key!r} is not an integer") from exc


def _parse_intersection(iid: str, fields: dict[str, str], origin: str) -> IntersectionSpec:
    where = f"{origin} [intersection {iid}]"
    lanes = _take_int(fields, "lanes", where)
    demand = _take_float(fields, "demand", where)
    lane_length = _take_float(fields, "lane_length", where, 300.0)
    speed_limit = _take_float(fields, "speed_limit", where, 13.89)
    control_zone = _take_float(fields, "control_zone", where, 30.0)
    interior_s = _take_float(fields, "interior_straight", where, 25.0)
    interior_l = _take_float(fields, "interior_left", where, 30.0)

    grid = fields.pop("grid", "8x8")
    try:
        rows, cols = (int(x) for x in grid.lower().split("x"))
    except ValueError as exc:
        raise ScenarioError(f"{where}: field 'grid' must look like '8x8'") from exc

    if "split" in fields:
        split: dict[Approach, int] = {}
        for part in fields.pop("split").split(","):
            name, _, count = part.partition(":")
            try:
                split[Approach(name.strip().upper())] = int(count)
            except ValueError as exc:
                raise ScenarioError(f"{where}: bad split entry {part.strip()!r}") from exc
        if sum(split.values()) != lanes:
            raise ScenarioError(
                f"{where}: split sums to {sum(split.values())}, expected lanes = {lanes}"
            )
    else:
        split = default_lane_split(lanes)

    movements: list[Movement] = []
    for a in (Approach.NORTH, Approach.EAST, Approach.SOUTH, Approach.WEST):
        key = f"movements {a.value}"
        n = split.get(a, 0)
        if key in fields:
            letters = fields.pop(key).replace(",", "").replace(" ", "").upper()
            if len(letters) != n:
                raise ScenarioError(
                    f"{where}: field {key!r} maps {len(letters)} lanes, approach has {n}"
                )
            for ch in letters:
                if ch not in ("S", "L"):
                    raise ScenarioError(f"{where}: field {key!r}: unknown maneuver {ch!r}")
                movements.append(Movement.parse(f"{a.value}-{ch}"))
        else:
            for k in range(n):
                man = "L" if k == n - 1 else "S"
                movements.append(Movement.parse(f"{a.value}-{man}"))

    if fields:
        raise ScenarioError(f"{where}: unknown field {sorted(fields)[0]!r}")

    return IntersectionSpec(
        id=iid,
        lane_count=lanes,
        lane_length=lane_length,
        speed_limit=speed_limit,
        control_zone_length=control_zone,
        per_lane_demand=demand,
        movement_of_lane=tuple(movements),
        interior_length={Maneuver.STRAIGHT: interior_s, Maneuver.LEFT: interior_l},
        grid_shape=(rows, cols),
    )


def _parse_connector(fields: dict[str, str], origin: str) -> Connector:
    where = f"{origin} [connector]"
    for key in ("from", "exit", "to", "entry"):
        if key not in fields:
            raise ScenarioError(f"{where}: missing required field {key!r}")
    try:
        exit_side = Approach(fields.pop("exit").strip().upper())
        entry = Approach(fields.pop("entry").strip().upper())
    except ValueError as exc:
        raise ScenarioError(f"{where}: approaches must be one of N/E/S/W") from exc
    src = fields.pop("from")
    dst = fields.pop("to")
    length = _take_float(fields, "length", where, 200.0)
    if fields:
        raise ScenarioError(f"{where}: unknown field {sorted(fields)[0]!r}")
    return Connector(source=src, exit_side=exit_side, target=dst, entry_approach=entry, length=length)


def _parse_signals(iid: str, fields: dict[str, str], origin: str):
    where = f"{origin} [signals {iid}]"
    phases: list[tuple[tuple[str, ...], float, float]] = []
    for key in sorted(k for k in fields if k.startswith("phase")):
        raw = fields.pop(key)
        parts = [p.strip() for p in raw.split(":")]
        if len(parts) != 3:
            raise ScenarioError(f"{where}: field {key!r} must be 'movements : green_s : yellow_s'")
        movs = tuple(m.strip() for m in parts[0].split(",") if m.strip())
        for m in movs:
            Movement.parse(m)  # reject unknown labels at load
        try:
            green, yellow = float(parts[1]), float(parts[2])
        except ValueError as exc:
            raise ScenarioError(f"{where}: field {key!r}: durations must be numbers") from exc
        phases.append((movs, green, yellow))
    if not phases:
        raise ScenarioError(f"{where}: at least one 'phase N = ...' field required")
    if fields and sorted(fields)[0] != "offset":
        raise ScenarioError(f"{where}: unknown field {sorted(fields)[0]!r}")
    return phases


def parse_scenario(text: str, origin: str = "<string>") -> NetworkSpec:
    """Parse scenario text into a validated NetworkSpec."""
    name = "unnamed"
    intersections: list[IntersectionSpec] = []
    connectors: list[Connector] = []
    signal_plans: dict[str, list] = {}

    for section, fields, lineno in _parse_sections(text, origin):
        words = section.split()
        if section == "network":
            name = fields.pop("name", name)
            if fields:
                raise ScenarioError(f"{origin}:{lineno}: [network] unknown field {sorted(fields)[0]!r}")
        elif words[0] == "intersection" and len(words) == 2:
            intersections.append(_parse_intersection(words[1], fields, origin))
        elif section == "connector":
            connectors.append(_parse_connector(fields, origin))
        elif words[0] == "signals" and len(words) == 2:
            signal_plans[words[1]] = _parse_signals(words[1], fields, origin)
        else:
            raise ScenarioError(f"{origin}:{lineno}: unknown section [{section}]")

    if not intersections:
        raise ScenarioError(f"{origin}: no [intersection <id>] sections found")
    for iid in signal_plans:
        if iid not in {s.id for s in intersections}:
            raise ScenarioError(f"{origin}: [signals {iid}] references unknown intersection")
    return NetworkSpec(
        name=name,
        intersections=tuple(intersections),
        connectors=tuple(connectors),
        signal_plans=signal_plans,
    )


def load_scenario(path: str | Path) -> NetworkSpec:
    """Load and validate a scenario file.

    Bundled scenarios can be addressed by bare name (``paper4`` or
    ``paper4.scn``); anything containing a path separator or pointing at an
    existing file is read from disk.
    """
    p = Path(path)
    if p.exists():
        return parse_scenario(p.read_text(), origin=str(p))
    bare = p.name if p.name.endswith(".scn") else p.name + ".scn"
    if p.name == str(path) or str(path) == bare:
        res = resources.files("mixsim").joinpath("data").joinpath(bare)
        if res.is_file():
            return parse_scenario(res.read_text(), origin=bare)
    raise ScenarioError(f"scenario file not found: {path}")
