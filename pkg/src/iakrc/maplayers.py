"""Geometric, regulation and interference layers and their aggregation into a weighted grid graph."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .interference import IntentNet, ThreatParams, enemy_field, intent_vector
from .world import DOOR, MOVES, OBSTACLE, Cell, EntityState, GridMap, Transition, visible_cells

UNKNOWN, KNOWN_FREE, KNOWN_OBSTACLE = 0, 1, 2
DIRECTIONS = tuple(MOVES.values())  # weight-array axis order

Edge = tuple[Cell, Cell]


class DimensionMismatch(ValueError):
    pass


# ---------------------------------------------------------------------------
# geometric layer


@dataclass
class GeometricLayer:
    known: np.ndarray  # int8 [y, x]
    rule_cells: np.ndarray  # bool [y, x], door cells seen so far
    dirty: set = field(default_factory=set)

    @classmethod
    def empty(cls, width: int, height: int) -> "GeometricLayer":
        return cls(np.zeros((height, width), dtype=np.int8), np.zeros((height, width), dtype=bool))

    @classmethod
    def from_map(cls, gmap: GridMap) -> "GeometricLayer":
        """Layer with every cell already observed."""
        known = np.where(gmap.kind == OBSTACLE, KNOWN_OBSTACLE, KNOWN_FREE).astype(np.int8)
        return cls(known, gmap.kind == DOOR)

    @property
    def shape(self) -> tuple[int, int]:
        return self.known.shape

    def copy(self) -> "GeometricLayer":
        return GeometricLayer(self.known.copy(), self.rule_cells.copy(), set(self.dirty))

    def take_dirty(self) -> set:
        out, self.dirty = self.dirty, set()
        return out

    def __eq__(self, other) -> bool:
        return (isinstance(other, GeometricLayer) and np.array_equal(self.known, other.known)
                and np.array_equal(self.rule_cells, other.rule_cells))


def update_from_sight(g: GeometricLayer, agent_pos: Cell, gmap: GridMap, sight_range: float) -> GeometricLayer:
    """Mark every visible cell within ``sight_range`` per the true map (in place).

    Cells whose aggregated meaning changes (new obstacle, obstacle cleared, new
    door) are added to ``g.dirty``.
    """
    gmap.check(agent_pos)
    if sight_range <= 0:
        raise ValueError("sight_range must be positive")
    if g.shape != (gmap.height, gmap.width):
        raise DimensionMismatch("geometric layer and map differ in size")
    cells = visible_cells(gmap, agent_pos, sight_range)
    xs, ys = cells[:, 0], cells[:, 1]
    truth = np.where(gmap.kind[ys, xs] == OBSTACLE, KNOWN_OBSTACLE, KNOWN_FREE).astype(np.int8)
    before = g.known[ys, xs]
    changed = (truth != before) & ((truth == KNOWN_OBSTACLE) | (before == KNOWN_OBSTACLE))
    doors = (gmap.kind[ys, xs] == DOOR) & ~g.rule_cells[ys, xs]
    g.known[ys, xs] = truth
    g.rule_cells[ys[doors], xs[doors]] = True
    for x, y in cells[changed | doors]:
        g.dirty.add((int(x), int(y)))
    return g


# ---------------------------------------------------------------------------
# regulation layer and confidence statistics


@dataclass
class RegulationLayer:
    edges: set = field(default_factory=set)
    transition_log: list = field(default_factory=list)

    def copy(self) -> "RegulationLayer":
        return RegulationLayer(set(self.edges), list(self.transition_log))


@dataclass
class ConfidenceStats:
    capacity: int = 256
    stats: dict = field(default_factory=dict)  # edge -> [succ, total]
    blocked: set = field(default_factory=set)
    fifo: deque = field(default_factory=deque)
    revalidate_at: dict = field(default_factory=dict)
    consecutive: dict = field(default_factory=dict)
    probing: set = field(default_factory=set)
    evidence_into: dict = field(default_factory=dict)  # target cell -> attempts logged
    blocked_reliability: dict = field(default_factory=dict)  # edge -> r when blocked

    def reliability(self, edge: Edge) -> float:
        succ, total = self.stats.get(edge, (0, 0))
        return succ / max(1, total)

    def copy(self) -> "ConfidenceStats":
        return ConfidenceStats(
            self.capacity, {k: list(v) for k, v in self.stats.items()}, set(self.blocked),
            deque(self.fifo), dict(self.revalidate_at), dict(self.consecutive), set(self.probing),
            dict(self.evidence_into), dict(self.blocked_reliability),
        )


def log_transition(r: RegulationLayer, c: ConfidenceStats, rec: Transition) -> tuple[RegulationLayer, ConfidenceStats]:
    """Record one transition (in place); self-transitions carry no edge evidence."""
    r.transition_log.append(tuple(rec))
    edge = (rec.s_t, rec.s_next)
    if rec.s_t == rec.s_next:
        return r, c
    if rec.success:
        r.edges.add(edge)
    entry = c.stats.setdefault(edge, [0, 0])
    entry[0] += 1 if rec.success else 0
    entry[1] += 1
    c.evidence_into[rec.s_next] = c.evidence_into.get(rec.s_next, 0) + 1
    return r, c


def _unblock(c: ConfidenceStats, edge: Edge) -> None:
    c.blocked.discard(edge)
    try:
        c.fifo.remove(edge)
    except ValueError:
        pass


def confidence_refresh(c: ConfidenceStats, now: int, tau_c: float = 0.5, eta_upd: float = 0.5,
                       revalidate_base: int = 10) -> ConfidenceStats:
    """Block unreliable edges, release reliable ones, and open due edges for one probe (in place).

    A newly blocked edge is scheduled for ``now + revalidate_base * (1/eta_upd)**k``
    where ``k`` counts its consecutive blockings.
    """
    if not 0 < tau_c < 1:
        raise ValueError("tau_c must lie in (0, 1)")
    if not 0 < eta_upd <= 1:
        raise ValueError("eta_upd must lie in (0, 1]")
    for edge in sorted(c.stats):
        succ, total = c.stats[edge]
        if total < 1:
            continue
        r = succ / max(1, total)
        if r < tau_c:
            if edge in c.blocked:
                if c.revalidate_at[edge] <= now:
                    _unblock(c, edge)
                    c.probing.add(edge)
                continue
            c.probing.discard(edge)
            k = c.consecutive.get(edge, 0)
            c.blocked.add(edge)
            c.blocked_reliability[edge] = r
            c.fifo.append(edge)
            c.revalidate_at[edge] = now + revalidate_base * (1.0 / eta_upd) ** k
            c.consecutive[edge] = k + 1
            while len(c.fifo) > c.capacity:
                c.blocked.discard(c.fifo.popleft())
        else:
            if edge in c.blocked:
                _unblock(c, edge)
            c.probing.discard(edge)
            c.consecutive.pop(edge, None)
            c.revalidate_at.pop(edge, None)
    return c


# ---------------------------------------------------------------------------
# interference layer


@dataclass
class InterferenceLayer:
    influence: np.ndarray
    last_update_step: int = -1
    intents: dict = field(default_factory=dict)  # enemy id -> predicted intent vector

    @classmethod
    def empty(cls, width: int, height: int) -> "InterferenceLayer":
        return cls(np.zeros((height, width)))

    def copy(self) -> "InterferenceLayer":
        return InterferenceLayer(self.influence.copy(), self.last_update_step, dict(self.intents))


def update_influence(il: InterferenceLayer, enemies: Iterable[EntityState], params: ThreatParams,
                     net: Optional[IntentNet] = None, step: Optional[int] = None) -> InterferenceLayer:
    """Recompute the summed field from scratch over the alive ``enemies`` (in place).

    Without a network every enemy is treated as facing every cell.
    """
    field_ = np.zeros_like(il.influence)
    intents = {}
    for e in enemies:
        if not e.alive:
            continue
        intent = intent_vector(net, e) if net is not None else np.zeros(2)
        intents[e.id] = intent
        field_ += enemy_field(e, intent, params, field_.shape)
    il.influence = field_
    il.intents = intents
    if step is not None:
        il.last_update_step = step
    return il


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class AggregatedGraph:
    width: int
    height: int
    weights: np.ndarray  # [y, x, direction] cost of the edge leaving (x, y); inf if impassable
    cell_cost: np.ndarray  # [y, x] 1 + cost_multiplier * influence
    obstacle: np.ndarray  # [y, x] known obstacles
    epoch: int = 0
    _adjacency: Optional[list] = field(default=None, repr=False)

    def __post_init__(self):
        for arr in (self.weights, self.cell_cost, self.obstacle):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.width * self.height

    def index(self, c: Cell) -> int:
        return c[1] * self.width + c[0]

    def cell(self, i: int) -> Cell:
        return (i % self.width, i // self.width)

    def in_bounds(self, c: Cell) -> bool:
        return 0 <= c[0] < self.width and 0 <= c[1] < self.height

    def weight(self, u: Cell, v: Cell) -> float:
        d = (v[0] - u[0], v[1] - u[1])
        if d not in DIRECTIONS or not self.in_bounds(u):
            raise ValueError(f"{u} -> {v} is not a grid edge")
        return float(self.weights[u[1], u[0], DIRECTIONS.index(d)])

    def is_open(self, c: Cell) -> bool:
        """True when some finite edge enters ``c``."""
        x, y = c
        for k, (dx, dy) in enumerate(DIRECTIONS):
            u = (x - dx, y - dy)
            if self.in_bounds(u) and math.isfinite(self.weights[u[1], u[0], k]):
                return True
        return False

    def edges(self) -> Iterable[tuple[Cell, Cell, float]]:
        for y in range(self.height):
            for x in range(self.width):
                for k, (dx, dy) in enumerate(DIRECTIONS):
                    v = (x + dx, y + dy)
                    if self.in_bounds(v):
                        yield (x, y), v, float(self.weights[y, x, k])

    def adjacency(self) -> list:
        """Per-cell list of ``(neighbor index, weight)`` over finite edges, in direction order."""
        if self._adjacency is None:
            w = self.weights.tolist()
            width = self.width
            adj = []
            for y in range(self.height):
                row = w[y]
                for x in range(width):
                    out = []
                    for (dx, dy), wt in zip(DIRECTIONS, row[x]):
                        if wt != math.inf:
                            out.append(((y + dy) * width + x + dx, wt))
                    adj.append(out)
            self._adjacency = adj
        return self._adjacency


def aggregate_graph(g: GeometricLayer, r: RegulationLayer, c: ConfidenceStats, il: InterferenceLayer,
                    params: ThreatParams, epoch: int = 0, interference_enabled: bool = True) -> AggregatedGraph:
    """Combine the layers into per-edge costs ``1 + cost_multiplier * influence[target]``.

    An edge is impassable when its target is a known obstacle, when it is
    confidence-blocked, or when its target is a door cell with transition
    evidence but no learned edge from this source. Unknown cells and
    not-yet-tried doors are passable.
    """
    if g.shape != il.influence.shape:
        raise DimensionMismatch(f"geometric {g.shape} vs interference {il.influence.shape}")
    height, width = g.shape
    if interference_enabled:
        cell_cost = 1.0 + params.cost_multiplier * il.influence
    else:
        cell_cost = np.ones((height, width))
    target_cost = np.where(g.known == KNOWN_OBSTACLE, math.inf, cell_cost)
    weights = np.full((height, width, len(DIRECTIONS)), math.inf)
    for k, (dx, dy) in enumerate(DIRECTIONS):
        ys = slice(max(0, -dy), height - max(0, dy))
        xs = slice(max(0, -dx), width - max(0, dx))
        ys_t = slice(max(0, dy), height - max(0, -dy))
        xs_t = slice(max(0, dx), width - max(0, -dx))
        weights[ys, xs, k] = target_cost[ys_t, xs_t]
    for y, x in zip(*np.nonzero(g.rule_cells)):
        v = (int(x), int(y))
        if not c.evidence_into.get(v):
            continue
        for k, (dx, dy) in enumerate(DIRECTIONS):
            u = (v[0] - dx, v[1] - dy)
            if 0 <= u[0] < width and 0 <= u[1] < height and (u, v) not in r.edges:
                weights[u[1], u[0], k] = math.inf
    for u, v in c.blocked:
        d = (v[0] - u[0], v[1] - u[1])
        if d in DIRECTIONS and 0 <= u[0] < width and 0 <= u[1] < height:
            weights[u[1], u[0], DIRECTIONS.index(d)] = math.inf
    return AggregatedGraph(width, height, weights, cell_cost, g.known == KNOWN_OBSTACLE, epoch)


@dataclass
class LayeredMap:
    """The three layers plus confidence statistics, updated once per step."""

    geometric: GeometricLayer
    regulation: RegulationLayer
    confidence: ConfidenceStats
    interference: InterferenceLayer

    @classmethod
    def empty(cls, width: int, height: int, capacity: int = 256) -> "LayeredMap":
        return cls(GeometricLayer.empty(width, height), RegulationLayer(), ConfidenceStats(capacity),
                   InterferenceLayer.empty(width, height))

    @classmethod
    def fully_observed(cls, gmap: GridMap, capacity: int = 256) -> "LayeredMap":
        lm = cls.empty(gmap.width, gmap.height, capacity)
        lm.geometric = GeometricLayer.from_map(gmap)
        return lm

    def aggregate(self, params: ThreatParams, epoch: int = 0, interference_enabled: bool = True) -> AggregatedGraph:
        return aggregate_graph(self.geometric, self.regulation, self.confidence, self.interference,
                               params, epoch, interference_enabled)


def static_graph(gmap: GridMap, influence: Optional[np.ndarray] = None, cost_multiplier: float = 1.5) -> AggregatedGraph:
    """Graph of a fully observed map with an optional fixed influence field."""
    lm = LayeredMap.fully_observed(gmap)
    if influence is not None:
        lm.interference.influence = np.asarray(influence, dtype=float)
    return lm.aggregate(ThreatParams(cost_multiplier=cost_multiplier))


# ---------------------------------------------------------------------------
# exports


def cost_map(graph: AggregatedGraph, g: GeometricLayer) -> np.ndarray:
    return np.where(g.known == KNOWN_OBSTACLE, math.inf, graph.cell_cost)


def normalize_map(m: np.ndarray) -> np.ndarray:
    """Min-max scale finite entries to [0, 1]; infinities are kept."""
    finite = np.isfinite(m)
    out = m.astype(float).copy()
    if not finite.any():
        return out
    lo, hi = m[finite].min(), m[finite].max()
    out[finite] = 0.0 if hi == lo else (m[finite] - lo) / (hi - lo)
    return out


def _fmt(v: float) -> str:
    return "inf" if v == math.inf else repr(float(v))


def heatmap_csv(graph: AggregatedGraph, g: GeometricLayer) -> str:
    norm = normalize_map(cost_map(graph, g))
    return "".join(",".join(_fmt(v) for v in row) + "\n" for row in norm)


def layer_dump(lm: LayeredMap, graph: AggregatedGraph) -> dict:
    glyph = {UNKNOWN: "?", KNOWN_FREE: ".", KNOWN_OBSTACLE: "#"}
    known_rows = []
    for y in range(graph.height):
        known_rows.append("".join("D" if lm.geometric.rule_cells[y, x] else glyph[int(lm.geometric.known[y, x])]
                                  for x in range(graph.width)))
    conf = lm.confidence
    return {
        "width": graph.width,
        "height": graph.height,
        "epoch": graph.epoch,
        "cells": known_rows,
        "regulation_edges": sorted([list(u), list(v)] for u, v in lm.regulation.edges),
        "stats": [[list(u), list(v), s, t] for (u, v), (s, t) in sorted(conf.stats.items())],
        "blocked": sorted([list(u), list(v)] for u, v in conf.blocked),
        "influence": [[repr(float(v)) for v in row] for row in lm.interference.influence],
        "edges": [[u[0], u[1], v[0], v[1], _fmt(w)] for u, v, w in graph.edges()],
    }
