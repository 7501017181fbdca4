"""Deterministic grid world: map, doors, entities, scripted policies.

Cells are ``(x, y)`` tuples; ``x`` is the column, ``y`` the row (row 0 is the
first map line). Arrays are indexed ``[y, x]``.
"""

from __future__ import annotations

import copy
import functools
import re
import zlib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Optional

import numpy as np

from .config import PARAM_KEYS, ConfigError, coerce

Cell = tuple[int, int]

FREE, OBSTACLE, DOOR = 0, 1, 2

ALLY, ENEMY = "ally", "enemy"

# action name -> displacement; order is the fixed tie-break order
MOVES: dict[str, Cell] = {"right": (1, 0), "down": (0, 1), "left": (-1, 0), "up": (0, -1)}
STAY = "stay"
ATTACK = "attack"

TRAJECTORY_LEN = 50
HISTORY_LEN = 10
ATTACK_WINDOW = 50
ATTACK_RANGE = 2
ATTACK_DAMAGE = 0.1
POLICIES = ("advance", "patrol")
# probability that an `advance` entity takes a random move instead of descending
ADVANCE_JITTER = 0.1


class ScenarioError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class EntityPlacementError(ScenarioError):
    pass


class DuplicateEntityError(ScenarioError):
    pass


class OutOfBoundsError(ValueError):
    pass


def substream(seed: int, label: str) -> np.random.Generator:
    """Independent RNG stream for ``label`` derived from the run seed."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(label.encode())])


@dataclass(frozen=True, eq=False)
class GridMap:
    width: int
    height: int
    kind: np.ndarray  # int8 [y, x] of FREE / OBSTACLE / DOOR
    door_ids: dict = field(default_factory=dict)  # cell -> door letter
    _fields: dict = field(default_factory=dict, repr=False)  # BFS cache

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("map must be at least 1x1")
        if self.kind.shape != (self.height, self.width):
            raise ValueError("kind array does not match dimensions")
        self.kind.setflags(write=False)

    @classmethod
    def from_rows(cls, rows: Iterable[str]) -> "GridMap":
        rows = list(rows)
        height, width = len(rows), len(rows[0]) if rows else 0
        kind = np.zeros((height, width), dtype=np.int8)
        doors = {}
        for y, row in enumerate(rows):
            if len(row) != width:
                raise ValueError(f"row {y} has width {len(row)}, expected {width}")
            for x, ch in enumerate(row):
                if ch == "#":
                    kind[y, x] = OBSTACLE
                elif ch == ".":
                    pass
                elif "A" <= ch <= "Z":
                    kind[y, x] = DOOR
                    doors[(x, y)] = ch
                else:
                    raise ValueError(f"unknown map symbol {ch!r}")
        return cls(width, height, kind, doors)

    @property
    def obstacles(self) -> np.ndarray:
        return self.kind == OBSTACLE

    def in_bounds(self, c: Cell) -> bool:
        return 0 <= c[0] < self.width and 0 <= c[1] < self.height

    def check(self, c: Cell) -> None:
        if not self.in_bounds(c):
            raise OutOfBoundsError(f"cell {c} outside {self.width}x{self.height} map")

    def is_obstacle(self, c: Cell) -> bool:
        return self.kind[c[1], c[0]] == OBSTACLE

    def rows(self) -> list[str]:
        out = []
        for y in range(self.height):
            chars = []
            for x in range(self.width):
                k = self.kind[y, x]
                chars.append("#" if k == OBSTACLE else self.door_ids[(x, y)] if k == DOOR else ".")
            out.append("".join(chars))
        return out

    def neighbors(self, c: Cell) -> Iterable[Cell]:
        x, y = c
        for dx, dy in MOVES.values():
            n = (x + dx, y + dy)
            if 0 <= n[0] < self.width and 0 <= n[1] < self.height:
                yield n

    def distance_field(self, sources: tuple[Cell, ...]) -> np.ndarray:
        """Static BFS hop counts from ``sources`` (doors passable); -1 if unreachable."""
        cached = self._fields.get(sources)
        if cached is not None:
            return cached
        dist = np.full((self.height, self.width), -1, dtype=np.int32)
        queue = deque()
        for s in sources:
            if dist[s[1], s[0]] < 0:
                dist[s[1], s[0]] = 0
                queue.append(s)
        obst = self.kind == OBSTACLE
        while queue:
            c = queue.popleft()
            d = dist[c[1], c[0]] + 1
            for n in self.neighbors(c):
                if dist[n[1], n[0]] < 0 and not obst[n[1], n[0]]:
                    dist[n[1], n[0]] = d
                    queue.append(n)
        if len(self._fields) > 256:
            self._fields.clear()
        self._fields[sources] = dist
        return dist


@dataclass(frozen=True)
class DoorRule:
    door_id: str
    period: int
    open_start: int
    open_end: int  # exclusive

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("door period must be >= 1")
        if not 0 <= self.open_start <= self.open_end <= self.period:
            raise ValueError("open phase must satisfy 0 <= start <= end <= period")

    def is_open(self, t: int) -> bool:
        return self.open_start <= t % self.period < self.open_end


@dataclass
class EntityState:
    id: int
    team: str
    position: Cell
    health: float = 1.0
    alive: bool = True
    policy: str = "advance"
    trajectory: deque = field(default_factory=lambda: deque(maxlen=TRAJECTORY_LEN))
    attack_steps: deque = field(default_factory=deque)
    waypoints: tuple = ()
    waypoint_index: int = 0

    def __post_init__(self):
        if not isinstance(self.trajectory, deque) or self.trajectory.maxlen != TRAJECTORY_LEN:
            self.trajectory = deque(self.trajectory, maxlen=TRAJECTORY_LEN)
        self.attack_steps = deque(self.attack_steps)

    @property
    def recent_attacks(self) -> int:
        return len(self.attack_steps)

    @property
    def last10(self) -> list[Cell]:
        """Trailing ten positions, oldest first, front-padded with the current position."""
        tail = list(self.trajectory)[-HISTORY_LEN:]
        return [self.position] * (HISTORY_LEN - len(tail)) + tail


class Transition(NamedTuple):
    agent_id: int
    t: int
    s_t: Cell
    action: str
    s_next: Cell  # attempted target for moves, s_t otherwise
    success: bool
    cause: str  # "", "bounds", "obstacle", "door", "occupied"


@dataclass
class WorldState:
    map: GridMap
    door_rules: dict
    entities: list
    step: int = 0
    seed: int = 0
    rng: np.random.Generator = None
    settings: dict = field(default_factory=dict)
    transitions: list = field(default_factory=list)

    def __post_init__(self):
        if self.rng is None:
            self.rng = substream(self.seed, "world")
        self.entities = sorted(self.entities, key=lambda e: e.id)

    def copy(self) -> "WorldState":
        clone = copy.copy(self)
        clone.entities = copy.deepcopy(self.entities)
        clone.rng = copy.deepcopy(self.rng)
        clone.settings = dict(self.settings)
        clone.transitions = []
        return clone

    def team(self, team: str, alive_only: bool = True) -> list[EntityState]:
        return [e for e in self.entities if e.team == team and (e.alive or not alive_only)]

    def allies(self) -> list[EntityState]:
        return self.team(ALLY)

    def enemies(self) -> list[EntityState]:
        return self.team(ENEMY)

    def entity(self, entity_id: int) -> EntityState:
        for e in self.entities:
            if e.id == entity_id:
                return e
        raise KeyError(entity_id)

    def door_open(self, c: Cell, t: Optional[int] = None) -> bool:
        """True unless ``c`` is a door cell whose rule is closed at step ``t``."""
        door = self.map.door_ids.get(c)
        if door is None:
            return True
        return self.door_rules[door].is_open(self.step if t is None else t)

    def occupancy(self) -> dict[Cell, int]:
        return {e.position: e.id for e in self.entities if e.alive}


# ---------------------------------------------------------------------------
# line of sight


def _raster(a: Cell, b: Cell) -> list[Cell]:
    x0, y0 = a
    x1, y1 = b
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    cells = [(x0, y0)]
    while (x0, y0) != (x1, y1):
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
        cells.append((x0, y0))
    return cells


def line_cells(a: Cell, b: Cell) -> list[Cell]:
    """Rasterized line between cell centres, identical for (a, b) and (b, a)."""
    if a <= b:
        return _raster(a, b)
    return _raster(b, a)[::-1]


def line_of_sight(gmap: GridMap, a: Cell, b: Cell) -> bool:
    gmap.check(a)
    gmap.check(b)
    obst = gmap.kind
    return all(obst[y, x] != OBSTACLE for x, y in line_cells(a, b)[1:-1])


@functools.lru_cache(maxsize=16)
def sight_table(radius: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Offsets within ``radius`` and the interior line cells of each, relative to the origin.

    Returns ``(offsets[n, 2], interior[n, L, 2], mask[n, L])``. The raster is
    translation invariant, so the table serves every viewer position.
    """
    r = int(np.floor(radius))
    offsets, lines = [], []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dx * dx + dy * dy <= radius * radius:
                offsets.append((dx, dy))
                lines.append(line_cells((0, 0), (dx, dy))[1:-1])
    longest = max((len(l) for l in lines), default=0) or 1
    interior = np.zeros((len(offsets), longest, 2), dtype=np.int64)
    mask = np.zeros((len(offsets), longest), dtype=bool)
    for i, cells in enumerate(lines):
        if cells:
            interior[i, : len(cells)] = cells
            mask[i, : len(cells)] = True
    for arr in (interior, mask):
        arr.setflags(write=False)
    return np.asarray(offsets, dtype=np.int64), interior, mask


def visible_cells(gmap: GridMap, origin: Cell, radius: float) -> np.ndarray:
    """All in-bounds cells within Euclidean ``radius`` of ``origin`` with line of sight, as ``(n, 2)``."""
    offsets, interior, mask = sight_table(float(radius))
    ox, oy = origin
    targets = offsets + (ox, oy)
    inside = (
        (targets[:, 0] >= 0) & (targets[:, 0] < gmap.width)
        & (targets[:, 1] >= 0) & (targets[:, 1] < gmap.height)
    )
    targets, interior, mask = targets[inside], interior[inside], mask[inside]
    xs = interior[..., 0] + ox
    ys = interior[..., 1] + oy
    blocked = ((gmap.kind[ys, xs] == OBSTACLE) & mask).any(axis=1)
    return targets[~blocked]


# ---------------------------------------------------------------------------
# scenario files


_MAP_ROW = re.compile(r"[.#A-Z]+")
_COORD = re.compile(r"(-?\d+),(-?\d+)")


def _parse_cell(token: str, line: int, name: str) -> Cell:
    m = _COORD.fullmatch(token)
    if not m:
        raise ScenarioError(f"expected x,y coordinates, got {token!r}", line, name)
    return int(m.group(1)), int(m.group(2))


def parse_scenario(text: str, seed: Optional[int] = None) -> WorldState:
    """Build a step-0 world from scenario text; ``seed`` overrides the header."""
    settings: dict = {}
    rules: dict[str, DoorRule] = {}
    declared: list[tuple[int, str, Cell, str, tuple, Optional[int]]] = []
    rows: list[str] = []
    row_lines: list[int] = []
    header_seed = 0

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith(";"):
            continue
        if line in ("map:", "---"):
            continue
        if _MAP_ROW.fullmatch(line):
            rows.append(line)
            row_lines.append(lineno)
            continue
        if rows:
            raise ScenarioError("header line after the map block", lineno)
        tokens = line.split()
        head = tokens[0]
        if head == "door":
            rules_entry = _parse_door(tokens, lineno)
            if rules_entry.door_id in rules:
                raise ScenarioError(f"duplicate rule for door {rules_entry.door_id}", lineno, "door")
            rules[rules_entry.door_id] = rules_entry
        elif head in (ALLY, ENEMY):
            declared.append(_parse_entity(tokens, lineno))
        elif "=" in head and len(tokens) == 1:
            key, _, value = head.partition("=")
            if key == "seed":
                try:
                    header_seed = int(value)
                except ValueError:
                    raise ScenarioError(f"seed must be an integer, got {value!r}", lineno, "seed") from None
                continue
            if key not in PARAM_KEYS:
                raise ScenarioError(f"unknown header key {key!r}", lineno, key)
            try:
                settings[key] = coerce(key, value)
            except ConfigError as exc:
                raise ScenarioError(str(exc), lineno, key) from None
        else:
            raise ScenarioError(f"cannot parse header line {line!r}", lineno)

    if not rows:
        raise ScenarioError("scenario has no map block")
    width = len(rows[0])
    for r, lineno in zip(rows, row_lines):
        if len(r) != width:
            raise ScenarioError(f"map row has width {len(r)}, expected {width}", lineno, "map")
    gmap = GridMap.from_rows(rows)

    used_doors = set(gmap.door_ids.values())
    for door in sorted(used_doors - set(rules)):
        raise ScenarioError(f"door {door} appears in the map without a rule", None, "door")
    for door in sorted(set(rules) - used_doors):
        raise ScenarioError(f"rule for door {door} which is not in the map", None, "door")

    entities = []
    ids_seen: dict[int, int] = {}
    cells_seen: dict[Cell, int] = {}
    for index, (lineno, team, cell, policy, waypoints, explicit_id) in enumerate(declared):
        eid = index if explicit_id is None else explicit_id
        if eid in ids_seen:
            raise DuplicateEntityError(f"entity id {eid} already declared on line {ids_seen[eid]}", lineno, "id")
        ids_seen[eid] = lineno
        if not gmap.in_bounds(cell):
            raise EntityPlacementError(f"{team} at {cell} is outside the map", lineno, team)
        kind = gmap.kind[cell[1], cell[0]]
        if kind == OBSTACLE:
            raise EntityPlacementError(f"{team} at {cell} is on an obstacle", lineno, team)
        if kind == DOOR:
            raise EntityPlacementError(f"{team} at {cell} is on a door cell", lineno, team)
        if cell in cells_seen:
            raise EntityPlacementError(f"{team} at {cell} shares a cell with the entity on line {cells_seen[cell]}", lineno, team)
        cells_seen[cell] = lineno
        for wp in waypoints:
            if not gmap.in_bounds(wp) or gmap.is_obstacle(wp):
                raise ScenarioError(f"waypoint {wp} is outside the map or on an obstacle", lineno, "waypoints")
        if policy == "patrol" and not waypoints:
            mirror = (gmap.width - 1 - cell[0], gmap.height - 1 - cell[1])
            waypoints = (cell, mirror) if gmap.kind[mirror[1], mirror[0]] == FREE else (cell,)
        entities.append(EntityState(eid, team, cell, policy=policy, waypoints=waypoints))

    run_seed = header_seed if seed is None else int(seed)
    settings_with_seed = dict(settings)
    return WorldState(gmap, rules, entities, step=0, seed=run_seed, settings=settings_with_seed)


def _parse_door(tokens: list[str], lineno: int) -> DoorRule:
    if len(tokens) != 4:
        raise ScenarioError("expected 'door <id> period=<p> open=<a>..<b>'", lineno, "door")
    door_id = tokens[1]
    if not re.fullmatch(r"[A-Z]", door_id):
        raise ScenarioError(f"door id must be one uppercase letter, got {door_id!r}", lineno, "door")
    fields = dict(tok.partition("=")[::2] for tok in tokens[2:])
    try:
        period = int(fields["period"])
    except (KeyError, ValueError):
        raise ScenarioError("missing or invalid period", lineno, "period") from None
    m = re.fullmatch(r"(\d+)\.\.(\d+)", fields.get("open", ""))
    if not m:
        raise ScenarioError("open phase must look like open=<a>..<b>", lineno, "open")
    try:
        return DoorRule(door_id, period, int(m.group(1)), int(m.group(2)))
    except ValueError as exc:
        raise ScenarioError(str(exc), lineno, "open") from None


def _parse_entity(tokens: list[str], lineno: int):
    team = tokens[0]
    if len(tokens) < 2:
        raise ScenarioError("entity line needs a position", lineno, team)
    cell = _parse_cell(tokens[1], lineno, "position")
    policy = "advance"
    waypoints: tuple = ()
    explicit_id = None
    for tok in tokens[2:]:
        if tok.startswith("id="):
            try:
                explicit_id = int(tok[3:])
            except ValueError:
                raise ScenarioError(f"bad id {tok!r}", lineno, "id") from None
        elif tok.startswith("waypoints="):
            waypoints = tuple(_parse_cell(p, lineno, "waypoints") for p in tok[10:].split(";") if p)
        elif tok in POLICIES:
            policy = tok
        else:
            raise ScenarioError(f"unknown entity attribute {tok!r}", lineno, team)
    return lineno, team, cell, policy, waypoints, explicit_id


def load_scenario(path, seed: Optional[int] = None) -> WorldState:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
    return parse_scenario(text, seed=seed)


# ---------------------------------------------------------------------------
# scripted policies and stepping

Action = tuple  # (name, payload)


def _chebyshev(a: Cell, b: Cell) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def _attack_target(w: WorldState, e: EntityState, opponents: list[EntityState]) -> Optional[int]:
    best = None
    for o in opponents:
        d = _chebyshev(e.position, o.position)
        if d <= ATTACK_RANGE and line_of_sight(w.map, e.position, o.position):
            key = (d, o.id)
            if best is None or key < best[0]:
                best = (key, o.id)
    return None if best is None else best[1]


def _descend(field_: np.ndarray, pos: Cell, gmap: GridMap, occupied: dict) -> str:
    here = field_[pos[1], pos[0]]
    best = None
    for name, (dx, dy) in MOVES.items():
        n = (pos[0] + dx, pos[1] + dy)
        if not gmap.in_bounds(n) or n in occupied:
            continue
        d = field_[n[1], n[0]]
        if 0 <= d < here and (best is None or d < best[0]):
            best = (d, name)
    return STAY if best is None else best[1]


def _decide(w: WorldState, e: EntityState, policy: str, fields: dict, occupied: dict) -> Action:
    opponents = w.team(ENEMY if e.team == ALLY else ALLY)
    jitter = w.rng.random()
    target = _attack_target(w, e, opponents)
    if target is not None:
        return ATTACK, target
    if policy == "patrol":
        waypoints = e.waypoints or (e.position,)
        goal = waypoints[e.waypoint_index % len(waypoints)]
        if e.position == goal:
            e.waypoint_index += 1
            goal = waypoints[e.waypoint_index % len(waypoints)]
        return _descend(w.map.distance_field((goal,)), e.position, w.map, occupied), None
    if not opponents:
        return STAY, None
    if jitter < ADVANCE_JITTER:
        names = list(MOVES)
        return names[int(w.rng.integers(len(names)))], None
    return _descend(fields[e.team], e.position, w.map, occupied), None



def _evict(w: WorldState, e: EntityState, occupied: dict, t_next: int) -> None:
    """Push an entity off a door cell that is closed at ``t_next`` to the nearest free cell."""
    seen = {e.position}
    queue = deque([e.position])
    while queue:
        c = queue.popleft()
        for n in w.map.neighbors(c):
            if n in seen or w.map.is_obstacle(n):
                continue
            seen.add(n)
            if n not in occupied and w.door_open(n, t_next):
                del occupied[e.position]
                e.position = n
                occupied[n] = e.id
                return
            queue.append(n)


def step_world(
    w: WorldState,
    policies: Optional[dict] = None,
    hook: Optional[Callable[[Transition], None]] = None,
) -> WorldState:
    """Advance one step and return the new state; ``w`` is left untouched.

    ``policies`` maps a team to a policy id overriding each entity's own.
    Ally transitions are collected in ``new.transitions`` and passed to ``hook``.
    """
    new = w.copy()
    t = new.step
    policies = policies or {}
    alive = [e for e in new.entities if e.alive]
    occupied = new.occupancy()

    fields = {}
    for team, other in ((ALLY, ENEMY), (ENEMY, ALLY)):
        sources = tuple(sorted(e.position for e in new.team(other)))
        if sources:
            fields[team] = new.map.distance_field(sources)
    decisions = {e.id: _decide(new, e, policies.get(e.team, e.policy), fields, occupied) for e in alive}

    for e in alive:
        if not e.alive:
            continue
        name, payload = decisions[e.id]
        start = e.position
        if name in MOVES:
            dx, dy = MOVES[name]
            target = (start[0] + dx, start[1] + dy)
            cause = ""
            if not new.map.in_bounds(target):
                cause, target = "bounds", start
            elif new.map.is_obstacle(target):
                cause = "obstacle"
            elif not new.door_open(target, t):
                cause = "door"
            elif target in occupied:
                cause = "occupied"
            if not cause:
                del occupied[start]
                occupied[target] = e.id
                e.position = target
            record = Transition(e.id, t, start, name, target, not cause, cause)
        else:
            if name == ATTACK:
                victim = new.entity(payload)
                if victim.alive:
                    victim.health = max(0.0, round(victim.health - ATTACK_DAMAGE, 10))
                    e.attack_steps.append(t)
                    if victim.health <= 0.0:
                        victim.alive = False
                        del occupied[victim.position]
            record = Transition(e.id, t, start, name, start, True, "")
        if e.team == ALLY:
            new.transitions.append(record)
            if hook is not None:
                hook(record)

    t_next = t + 1
    for e in new.entities:
        if e.alive and not new.door_open(e.position, t_next):
            _evict(new, e, occupied, t_next)
    for e in new.entities:
        if e.alive:
            e.trajectory.append(e.position)
        while e.attack_steps and e.attack_steps[0] <= t_next - ATTACK_WINDOW:
            e.attack_steps.popleft()
    new.step = t_next
    return new


def run_steps(w: WorldState, n: int, policies: Optional[dict] = None) -> WorldState:
    for _ in range(n):
        w = step_world(w, policies)
    return w
