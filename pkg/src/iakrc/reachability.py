"""Shortest transition distance, interference-aware distance and K-step reachable sets."""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .maplayers import DIRECTIONS, AggregatedGraph
from .world import MOVES, OBSTACLE, Cell, WorldState

INF = math.inf


class SourceOnObstacle(ValueError):
    pass


class InvalidPath(ValueError):
    pass


@dataclass
class ReachResult:
    source: Cell
    dist: dict  # settled cell -> distance; absent means unreachable (or beyond the horizon)
    parent: dict  # cell -> predecessor on the chosen shortest path
    expansions: int  # priority-queue pops, stale ones included
    epoch: int = 0
    horizon: Optional[float] = None

    def distance(self, c: Cell) -> float:
        return self.dist.get(c, INF)

    def path(self, c: Cell) -> list[Cell]:
        if c not in self.dist:
            raise KeyError(f"{c} not reached from {self.source}")
        out = [c]
        while out[-1] != self.source:
            out.append(self.parent[out[-1]])
        return out[::-1]


@dataclass(frozen=True)
class ReachableSet:
    source: Cell
    K: float
    members: frozenset = field(default_factory=frozenset)

    def __contains__(self, c) -> bool:
        return c in self.members


def _check(graph: AggregatedGraph, c: Cell) -> None:
    if not graph.in_bounds(c):
        raise ValueError(f"cell {c} outside {graph.width}x{graph.height} graph")


def dijkstra_reach(graph: AggregatedGraph, source: Cell, K: Optional[float] = None,
                   target: Optional[Cell] = None) -> ReachResult:
    """Single-source shortest paths on ``graph``.

    With ``K`` the search stops once the popped distance exceeds ``K`` and only
    cells within the horizon are returned; with ``target`` it stops when the
    target is settled. Heap entries are ``(distance, cell index)`` so equal
    distances settle in ascending index order.
    """
    _check(graph, source)
    if graph.obstacle[source[1], source[0]]:
        raise SourceOnObstacle(f"source {source} is a known obstacle")
    adj = graph.adjacency()
    width = graph.width
    s = source[1] * width + source[0]
    t = None if target is None else target[1] * width + target[0]
    best = {s: 0.0}
    parent: dict[int, int] = {}
    settled: dict[int, float] = {}
    heap = [(0.0, s)]
    pops = 0
    while heap:
        d, u = heapq.heappop(heap)
        pops += 1
        if u in settled:
            continue
        if K is not None and d > K:
            break
        settled[u] = d
        if u == t:
            break
        for v, w in adj[u]:
            nd = d + w
            if nd < best.get(v, INF):
                best[v] = nd
                parent[v] = u
                heapq.heappush(heap, (nd, v))
    dist = {(i % width, i // width): d for i, d in settled.items()}
    par = {(i % width, i // width): (parent[i] % width, parent[i] // width) for i in settled if i != s}
    return ReachResult(source, dist, par, pops, graph.epoch, K)


def shortest_transition_distance(graph: AggregatedGraph, a: Cell, b: Cell) -> float:
    """Hop count from ``a`` to ``b`` over passable edges, ignoring their costs."""
    _check(graph, a)
    _check(graph, b)
    if a == b:
        return 0
    adj = graph.adjacency()
    width = graph.width
    s, t = a[1] * width + a[0], b[1] * width + b[0]
    seen = {s: 0}
    queue = deque([s])
    while queue:
        u = queue.popleft()
        for v, _ in adj[u]:
            if v not in seen:
                seen[v] = seen[u] + 1
                if v == t:
                    return seen[v]
                queue.append(v)
    return INF


def d_ia(graph: AggregatedGraph, a: Cell, b: Cell) -> float:
    _check(graph, a)
    _check(graph, b)
    if a == b:
        return 0.0
    if graph.obstacle[a[1], a[0]]:
        return INF
    return dijkstra_reach(graph, a, target=b).distance(b)


def cooperation_cost(graph: AggregatedGraph, path: Sequence[Cell]) -> float:
    """Mean per-step cost ``1 + cost_multiplier * influence`` over the cells after the start."""
    if not path:
        raise InvalidPath("empty path")
    for c in path:
        _check(graph, c)
    t = len(path) - 1
    if t == 0:
        return 0.0
    total = 0.0
    for u, v in zip(path, path[1:]):
        if (v[0] - u[0], v[1] - u[1]) not in DIRECTIONS:
            raise InvalidPath(f"{u} and {v} are not adjacent")
        if graph.weight(u, v) == INF:
            return INF
        total += float(graph.cell_cost[v[1], v[0]])
    return total / t


def reachable_set(graph: AggregatedGraph, source: Cell, K: float) -> ReachableSet:
    if K < 0:
        raise ValueError("K must be non-negative")
    return to_reachable_set(dijkstra_reach(graph, source, K=K), K)


def to_reachable_set(result: ReachResult, K: float) -> ReachableSet:
    return ReachableSet(result.source, K, frozenset(c for c, d in result.dist.items() if d <= K))


class ReachCache:
    """K-bounded results per source, kept across graph epochs while still valid.

    A bounded result only depends on edges leaving its settled cells, so it
    survives an epoch unless one of those edges changed weight.
    """

    def __init__(self, K: float, full_rebuild: bool = False):
        self.K = K
        self.full_rebuild = full_rebuild
        self.graph: Optional[AggregatedGraph] = None
        self.results: dict[Cell, ReachResult] = {}
        self.recomputed = 0
        self.reused = 0

    def update(self, graph: AggregatedGraph) -> None:
        prev = self.graph
        self.graph = graph
        if self.full_rebuild or prev is None or prev.weights.shape != graph.weights.shape:
            self.results = {}
            return
        changed = np.any(prev.weights != graph.weights, axis=2)
        if not changed.any():
            return
        self.results = {
            src: res for src, res in self.results.items()
            if not any(changed[y, x] for x, y in res.dist)
        }

    def get(self, source: Cell) -> ReachResult:
        res = self.results.get(source)
        if res is not None:
            self.reused += 1
            return res
        res = dijkstra_reach(self.graph, source, K=self.K)
        self.results[source] = res
        self.recomputed += 1
        return res


# ---------------------------------------------------------------------------
# brute-force oracle over the true world dynamics


def _evicted(world: WorldState, c: Cell, t_next: int) -> Cell:
    if world.door_open(c, t_next):
        return c
    seen = {c}
    queue = deque([c])
    while queue:
        u = queue.popleft()
        for dx, dy in MOVES.values():
            n = (u[0] + dx, u[1] + dy)
            if n in seen or not world.map.in_bounds(n) or world.map.is_obstacle(n):
                continue
            seen.add(n)
            if world.door_open(n, t_next):
                return n
            queue.append(n)
    return c


def brute_force_d_st(world: WorldState, a: Cell, b: Cell, max_t: int = 64) -> float:
    """Minimum first-hitting time from ``a`` to ``b`` starting at ``world.step``.

    Breadth-first over ``(cell, time mod door-period lcm)`` for a lone walker
    under the true rules: doors are entered only while open and a walker left
    on a door as it closes is pushed off it. Other entities are ignored.
    """
    if max_t > 64:
        raise ValueError("max_t is capped at 64")
    world.map.check(a)
    world.map.check(b)
    if a == b:
        return 0
    cycle = math.lcm(*(r.period for r in world.door_rules.values())) if world.door_rules else 1
    doors = bool(world.door_rules)
    passable = {(int(x), int(y)) for y, x in zip(*np.nonzero(world.map.kind != OBSTACLE))}
    t0 = world.step
    seen = {(a, t0 % cycle)}
    frontier = [a]
    for k in range(max_t):
        t = t0 + k
        nxt = []
        for c in frontier:
            options = [c]
            for dx, dy in MOVES.values():
                n = (c[0] + dx, c[1] + dy)
                if n in passable and (not doors or world.door_open(n, t)):
                    options.append(n)
            for n in options:
                if doors:
                    n = _evicted(world, n, t + 1)
                if n == b:
                    return k + 1
                key = (n, (t + 1) % cycle)
                if key not in seen:
                    seen.add(key)
                    nxt.append(n)
        if not nxt:
            break
        frontier = nxt
    return INF
