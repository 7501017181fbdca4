from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iakrc.generate import scenario_path
from iakrc.grouping import (CommGraph, GroupAssignment, assign_related, build_comm_graph, elect_leaders,
                            group_euclid, group_iakrc, group_vision, neighbor_count, reach_table)
from iakrc.maplayers import LayeredMap, static_graph
from iakrc.interference import ThreatParams
from iakrc.metrics import lambda2
from iakrc.reachability import d_ia
from iakrc.world import GridMap, load_scenario


def _table(rows, agents, K):
    return reach_table(static_graph(GridMap.from_rows(rows)), agents, K)


def _line(n=5):
    return {i: (i, 0) for i in range(n)}


def _check_partition(a: GroupAssignment, ids):
    seen = [m for g in a.groups.values() for m in g] + list(a.unassigned)
    assert sorted(seen) == sorted(ids)
    for leader, members in a.groups.items():
        assert members[0] == leader


def test_neighbor_counts_on_a_line():
    t = _table(["....."], _line(), 2)
    assert [neighbor_count(t.sets, t.agents)[i] for i in range(5)] == [2, 3, 4, 3, 2]
    assert neighbor_count(_table(["..."], {0: (1, 0)}, 2).sets, {0: (1, 0)}) == {0: 0}
    walled = _table([".#.", ".#.", ".#."], {0: (0, 1), 1: (2, 1)}, 9)
    assert neighbor_count(walled.sets, walled.agents) == {0: 0, 1: 0}


def test_elect_leaders():
    counts = dict(enumerate([2, 3, 4, 3, 2]))
    assert elect_leaders(counts, 2) == [2, 1]
    assert elect_leaders({i: 1 for i in range(6)}, 3) == [0, 1, 2]
    assert elect_leaders({4: 0, 9: 0}, 3) == [4, 9]
    with pytest.raises(ValueError):
        elect_leaders(counts, 0)


def test_smallest_candidate_group_wins():
    # leader 1 already holds follower 2; follower 3 sees both and goes to leader 0
    rel = {(1, 2), (0, 3), (1, 3)}
    groups, un = assign_related([0, 1], [0, 1, 2, 3], lambda l, f: (l, f) in rel)
    assert groups == {0: [0, 3], 1: [1, 2]} and un == []


def test_assignment_sequential_sizes_and_walls():
    groups, un = assign_related([0], [0, 1, 2], lambda l, f: True)
    assert groups == {0: [0, 1, 2]}
    groups, un = assign_related([0], [0, 1], lambda l, f: False)
    assert groups == {0: [0]} and un == [1]


def test_direction_flag():
    rel = {(0, 1)}  # 0 reaches 1 but not the reverse
    assert assign_related([0], [0, 1], lambda s, d: (s, d) in rel)[0] == {0: [0, 1]}
    assert assign_related([0], [0, 1], lambda s, d: (s, d) in rel, "follower")[1] == [1]
    with pytest.raises(ValueError):
        assign_related([0], [0, 1], lambda s, d: True, "sideways")


def test_comm_graph_rules():
    a = GroupAssignment("x", [0], {0: [0, 1, 2, 3]}, [4], {})
    # followers sit on three arms, each 2 from the leader and 4 from each other
    d = {}
    for f in (1, 2, 3):
        d[(0, f)] = d[(f, 0)] = 2.0
    for i in (1, 2, 3):
        for j in (1, 2, 3):
            if i != j:
                d[(i, j)] = 4.0
    star = build_comm_graph(a, d, 3)
    assert star.edges == [(0, 1), (0, 2), (0, 3)]
    assert lambda2(star.subgraph([0, 1, 2, 3])) == pytest.approx(1.0, abs=1e-12)
    assert star.degree()[4] == 0
    clique = build_comm_graph(a, d, 4)
    assert len(clique.edges) == 6
    # one direction within K is enough
    b = GroupAssignment("x", [0], {0: [0, 1]}, [], {})
    assert build_comm_graph(b, {(0, 1): 9.0, (1, 0): math.inf}, 9).edges == [(0, 1)]


def test_wall_fixture_euclid_vs_iakrc():
    w = load_scenario(scenario_path("wall_long"))
    agents = {a.id: a.position for a in w.allies()}
    assert math.dist(agents[0], agents[1]) == 2
    graph = LayeredMap.fully_observed(w.map).aggregate(ThreatParams())
    eu = group_euclid(agents, 1, 9.0)
    assert eu.group_of(0) == eu.group_of(1) is not None
    table = reach_table(graph, agents, 9)
    assert d_ia(graph, agents[0], agents[1]) == 16 and table.distance(0, 1) == math.inf
    ia = group_iakrc(table, 1)
    assert ia.group_of(0) != ia.group_of(1)
    short = load_scenario(scenario_path("wall_short"))
    agents = {a.id: a.position for a in short.allies()}
    graph = LayeredMap.fully_observed(short.map).aggregate(ThreatParams())
    table = reach_table(graph, agents, 9)
    assert table.distance(0, 1) == 8
    ia = group_iakrc(table, 1)
    assert ia.group_of(0) == ia.group_of(1) is not None


def test_euclid_collinear_matches_iakrc():
    agents = {0: (0, 0), 1: (2, 0), 2: (3, 0), 3: (7, 0), 4: (12, 0), 5: (13, 0)}
    for K in (1, 2, 4, 5):
        ia = group_iakrc(_table(["." * 14], agents, K), 2)
        eu = group_euclid(agents, 2, K)
        assert (ia.leaders, ia.groups, ia.unassigned) == (eu.leaders, eu.groups, eu.unassigned)


def test_euclid_far_apart():
    agents = {i: (10 * i, 0) for i in range(4)}
    a = group_euclid(agents, 2, 3.0)
    assert a.leaders == [0, 1] and a.unassigned == [2, 3]
    with pytest.raises(ValueError):
        group_euclid(agents, 2, 0.0)


def test_vision_cases():
    gmap = GridMap.from_rows(["......", "......", "######", "......"])
    agents = {0: (0, 0), 1: (5, 0), 2: (2, 1), 3: (3, 3)}
    rng = np.random.default_rng(0)
    a = group_vision(agents, gmap, 1, 9.0, rng)
    # agent 3 sees nobody: either an empty leader or unassigned
    assert a.neighbor_counts[3] == 0
    assert a.groups.get(3) == [3] or 3 in a.unassigned
    open_map = GridMap.from_rows(["......"] * 4)
    b = group_vision({0: (0, 0), 1: (5, 3), 2: (2, 2)}, open_map, 1, 9.0, np.random.default_rng(1))
    assert b.unassigned == []
    c1 = group_vision(agents, gmap, 2, 9.0, np.random.default_rng(42))
    c2 = group_vision(agents, gmap, 2, 9.0, np.random.default_rng(42))
    assert c1.to_json() == c2.to_json()
    with pytest.raises(ValueError):
        group_vision(agents, gmap, 1, 0.0, rng)


def test_expansion_counters():
    t = _table(["......"] * 4, {0: (0, 0), 1: (5, 3), 2: (2, 2)}, 3)
    a = group_iakrc(t, 1)
    assert a.expansions_total == sum(r.expansions for r in t.results.values())
    assert a.expansions_per_agent == a.expansions_total / 3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.sampled_from(["leader", "follower"]))
def test_grouping_properties(seed, M, direction):
    rng = np.random.default_rng(seed)
    rows = ["".join("#" if v else "." for v in row) for row in rng.random((10, 10)) < 0.2]
    gmap = GridMap.from_rows(rows)
    free = [(x, y) for y in range(10) for x in range(10) if not gmap.is_obstacle((x, y))]
    n = int(rng.integers(1, 9))
    picks = rng.choice(len(free), size=min(n, len(free)), replace=False)
    agents = {int(i) * 3: free[int(k)] for i, k in enumerate(picks)}
    K = float(rng.uniform(0, 8))
    table = reach_table(static_graph(gmap, rng.uniform(0, 1, (10, 10))), agents, K)
    a = group_iakrc(table, M, direction)
    _check_partition(a, agents)
    assert len(a.leaders) == min(M, len(agents))
    sizes = {l: 1 for l in a.leaders}
    for f in sorted(set(agents) - set(a.leaders)):
        def rel(l):
            src, dst = (l, f) if direction == "leader" else (f, l)
            return agents[dst] in table.sets[src]
        cands = [l for l in a.leaders if rel(l)]
        if not cands:
            assert f in a.unassigned
            continue
        home = a.group_of(f)
        assert home in cands
        # the greedy rule: no other candidate was strictly smaller when f arrived
        assert all(sizes[home] <= sizes[l] for l in cands)
        sizes[home] += 1
    again = group_iakrc(table, M, direction)
    assert again.digest() == a.digest() and again.leaders == a.leaders
    comm = build_comm_graph(a, table.pairwise(), K)
    for i, j in comm.edges:
        assert a.group_of(i) == a.group_of(j) is not None


def test_comm_graph_adjacency():
    g = CommGraph([1, 5, 7], [(1, 5), (5, 7)])
    np.testing.assert_array_equal(g.adjacency(), [[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    assert g.degree() == {1: 1, 5: 2, 7: 1}
