"""Leader election, load-balanced follower assignment and the baseline groupers."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .maplayers import AggregatedGraph
from .reachability import ReachCache, ReachableSet, dijkstra_reach, to_reachable_set
from .world import Cell, GridMap, line_of_sight

ALGORITHMS = ("iakrc", "euclid", "vision")
DIRECTIONS = ("leader", "follower")

Related = Callable[[int, int], bool]  # related(source_id, target_id)


@dataclass
class GroupAssignment:
    algorithm: str
    leaders: list
    groups: dict  # leader id -> member ids, leader first then followers by id
    unassigned: list
    neighbor_counts: dict
    expansions_total: int = 0
    expansions_per_agent: float = 0.0

    def group_of(self, agent_id: int) -> Optional[int]:
        for leader, members in self.groups.items():
            if agent_id in members:
                return leader
        return None

    def members(self) -> list[int]:
        return sorted([m for g in self.groups.values() for m in g] + list(self.unassigned))

    def to_json(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "leaders": list(self.leaders),
            "groups": {str(k): list(v) for k, v in self.groups.items()},
            "unassigned": list(self.unassigned),
            "neighbor_counts": {str(k): v for k, v in sorted(self.neighbor_counts.items())},
            "expansions": {"total": self.expansions_total, "per_agent": self.expansions_per_agent},
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class CommGraph:
    nodes: list
    edges: list  # sorted (i, j) pairs with i < j

    def adjacency(self) -> np.ndarray:
        index = {n: k for k, n in enumerate(self.nodes)}
        a = np.zeros((len(self.nodes), len(self.nodes)))
        for i, j in self.edges:
            a[index[i], index[j]] = a[index[j], index[i]] = 1.0
        return a

    def degree(self) -> dict:
        deg = {n: 0 for n in self.nodes}
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def subgraph(self, members: Sequence[int]) -> "CommGraph":
        keep = set(members)
        return CommGraph(sorted(keep), [e for e in self.edges if e[0] in keep and e[1] in keep])


# ---------------------------------------------------------------------------
# generic election and assignment


def neighbor_count(reach: Mapping[int, ReachableSet], agents: Mapping[int, Cell]) -> dict:
    return {i: sum(1 for j, p in agents.items() if j != i and p in reach[i]) for i in sorted(agents)}


def _count_related(ids: Sequence[int], related: Related) -> dict:
    return {i: sum(1 for j in ids if j != i and related(i, j)) for i in ids}


def elect_leaders(counts: Mapping[int, int], M: int) -> list[int]:
    if M < 1:
        raise ValueError("need at least one leader")
    return sorted(counts, key=lambda i: (-counts[i], i))[:M]


def assign_related(leaders: Sequence[int], ids: Sequence[int], related: Related,
                   direction: str = "leader") -> tuple[dict, list]:
    """Greedy smallest-group assignment of the non-leaders in ascending id order.

    ``direction="leader"`` tests ``related(leader, follower)``; ``"follower"``
    tests ``related(follower, leader)``.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    groups = {l: [l] for l in leaders}
    unassigned = []
    for f in sorted(set(ids) - set(leaders)):
        if direction == "leader":
            cands = [l for l in leaders if related(l, f)]
        else:
            cands = [l for l in leaders if related(f, l)]
        if not cands:
            unassigned.append(f)
            continue
        best = min(cands, key=lambda l: (len(groups[l]), l))
        groups[best].append(f)
    return groups, unassigned


def assign_followers(leaders: Sequence[int], reach: Mapping[int, ReachableSet], followers: Mapping[int, Cell],
                     direction: str = "leader", positions: Optional[Mapping[int, Cell]] = None) -> tuple[dict, list]:
    """Affiliate ``followers`` to leaders through K-step reachable sets.

    ``reach`` must hold a set for every leader (leader direction) or for every
    follower (follower direction). ``positions`` supplies leader cells for the
    follower direction and defaults to ``followers``.
    """
    where = dict(positions or {})
    where.update(followers)
    ids = sorted(set(followers) | set(leaders))

    def related(src: int, dst: int) -> bool:
        return where[dst] in reach[src]

    return assign_related(leaders, ids, related, direction)


def build_comm_graph(assignment: GroupAssignment, d: Mapping[tuple[int, int], float], K: float) -> CommGraph:
    """Intra-group edges between members whose shorter directed distance is within ``K``."""
    nodes = assignment.members()
    edges = []
    for members in assignment.groups.values():
        ms = sorted(members)
        for a in range(len(ms)):
            for b in range(a + 1, len(ms)):
                i, j = ms[a], ms[b]
                if min(d.get((i, j), math.inf), d.get((j, i), math.inf)) <= K:
                    edges.append((i, j))
    return CommGraph(nodes, sorted(edges))


# ---------------------------------------------------------------------------
# groupers


@dataclass
class ReachTable:
    """K-bounded Dijkstra results for every agent on one graph snapshot."""

    K: float
    agents: dict  # id -> cell
    results: dict  # id -> ReachResult
    sets: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sets = {i: to_reachable_set(r, self.K) for i, r in self.results.items()}

    def distance(self, i: int, j: int) -> float:
        return self.results[i].distance(self.agents[j])

    def pairwise(self) -> dict:
        return {(i, j): self.distance(i, j) for i in self.agents for j in self.agents if i != j}

    @property
    def expansions_total(self) -> int:
        return sum(r.expansions for r in self.results.values())

    @property
    def expansions(self) -> dict:
        return {i: r.expansions for i, r in self.results.items()}


def reach_table(graph: AggregatedGraph, agents: Mapping[int, Cell], K: float,
                cache: Optional[ReachCache] = None) -> ReachTable:
    results = {}
    for i in sorted(agents):
        if cache is not None:
            results[i] = cache.get(agents[i])
        else:
            results[i] = dijkstra_reach(graph, agents[i], K=K)
    return ReachTable(K, dict(agents), results)


def _finish(algorithm: str, leaders, groups, unassigned, counts, total: int, n: int) -> GroupAssignment:
    return GroupAssignment(algorithm, list(leaders), groups, unassigned, counts,
                           total, total / n if n else 0.0)


def group_iakrc(table: ReachTable, M: int, direction: str = "leader") -> GroupAssignment:
    agents = table.agents
    counts = neighbor_count(table.sets, agents)
    leaders = elect_leaders(counts, M) if agents else []
    groups, unassigned = assign_followers(leaders, table.sets, agents, direction)
    return _finish("iakrc", leaders, groups, unassigned, counts, table.expansions_total, len(agents))


def group_euclid(agents: Mapping[int, Cell], M: int, radius: float) -> GroupAssignment:
    if radius <= 0:
        raise ValueError("radius must be positive")
    ids = sorted(agents)

    def related(i: int, j: int) -> bool:
        return math.dist(agents[i], agents[j]) <= radius

    counts = _count_related(ids, related)
    leaders = elect_leaders(counts, M) if ids else []
    groups, unassigned = assign_related(leaders, ids, related)
    return _finish("euclid", leaders, groups, unassigned, counts, 0, len(ids))


def group_vision(agents: Mapping[int, Cell], gmap: GridMap, M: int, sight_range: float,
                 rng: np.random.Generator) -> GroupAssignment:
    """Mutual-visibility grouping with uniformly drawn leaders."""
    if sight_range <= 0:
        raise ValueError("sight_range must be positive")
    ids = sorted(agents)
    seen: dict = {}

    def related(i: int, j: int) -> bool:
        key = (min(i, j), max(i, j))
        if key not in seen:
            a, b = agents[i], agents[j]
            seen[key] = math.dist(a, b) <= sight_range and line_of_sight(gmap, a, b)
        return seen[key]

    counts = _count_related(ids, related)
    if ids:
        picks = rng.choice(len(ids), size=min(M, len(ids)), replace=False)
        leaders = [ids[int(k)] for k in picks]
    else:
        leaders = []
    groups, unassigned = assign_related(leaders, ids, related)
    return _finish("vision", leaders, groups, unassigned, counts, 0, len(ids))
