"""Per-step orchestration: layer updates, interference, reachability, grouping, metrics, world step."""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import Params
from .grouping import (ALGORITHMS, CommGraph, GroupAssignment, build_comm_graph, group_euclid, group_iakrc,
                       group_vision, reach_table)
from .interference import IntentNet, IntentSample, ThreatParams, featurize, train_intent
from .maplayers import (LayeredMap, confidence_refresh, heatmap_csv, layer_dump, log_transition,
                        update_from_sight, update_influence)
from .metrics import group_lambda2, structure_csv, structure_report
from .reachability import ReachCache
from .world import FREE, WorldState, line_of_sight, load_scenario, step_world, substream

logger = logging.getLogger(__name__)

PHASES = ("sight", "transitions", "confidence", "interference", "aggregate", "reach", "group", "metrics", "world")


@dataclass
class RunConfig:
    scenario: str
    algorithm: str = "iakrc"
    steps: int = 500
    seed: Optional[int] = None
    interference_enabled: bool = True
    out_dir: Optional[str] = None
    overrides: dict = field(default_factory=dict)
    emit_heatmaps: bool = False
    full_rebuild: bool = False
    intent_net: Optional[str] = None
    direction: str = "leader"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")


def resolve_params(world: WorldState, overrides: Optional[dict] = None) -> Params:
    """Defaults, then scenario header settings, then explicit overrides."""
    return Params().with_overrides(world.settings).with_overrides(overrides or {})


@dataclass
class Snapshot:
    step: int
    assignment: GroupAssignment
    comm: CommGraph


class Episode:
    """Runs the grouping pipeline over a world, one snapshot per step, for one or more groupers."""

    def __init__(self, world: WorldState, params: Params, algorithms: Sequence[str] = ("iakrc",),
                 interference_enabled: bool = True, net: Optional[IntentNet] = None,
                 full_rebuild: bool = False, direction: str = "leader"):
        for a in algorithms:
            if a not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {a!r}")
        self.world = world
        self.params = params
        self.threat = ThreatParams.from_params(params)
        self.algorithms = tuple(algorithms)
        self.interference_enabled = interference_enabled
        self.net = net
        self.direction = direction
        self.layers = LayeredMap.empty(world.map.width, world.map.height, params.fifo_capacity)
        self.cache = ReachCache(params.k, full_rebuild)
        self.vision_rng = substream(world.seed, "vision")
        self.train_rng = substream(world.seed, "train")
        self.samples: deque = deque(maxlen=params.intent_buffer)
        self.phase_trace: list[tuple[int, str]] = []
        self.graph = None
        self.snapshots: dict[str, list[Snapshot]] = {a: [] for a in self.algorithms}
        self.records: list[dict] = []

    def _phase(self, name: str) -> None:
        self.phase_trace.append((self.world.step, name))
        logger.debug("step %d phase %s", self.world.step, name)

    @property
    def finished(self) -> bool:
        return not self.world.allies() or not self.world.enemies()

    def observe(self):
        """Phases 1 to 3 for the current step; returns the graph and the per-agent reach table."""
        w = self.world
        p = self.params
        lm = self.layers
        allies = w.allies()

        # phase 1: multi-layer map update
        self._phase("sight")
        for a in allies:
            update_from_sight(lm.geometric, a.position, w.map, p.sight_range)
        self._phase("transitions")
        for rec in w.transitions:
            if rec.cause != "occupied":
                log_transition(lm.regulation, lm.confidence, rec)
        self._phase("confidence")
        confidence_refresh(lm.confidence, w.step, p.tau_c, p.eta_upd, p.revalidate_base)

        # phase 2: interference field from enemies the team can see
        if self.interference_enabled:
            self._phase("interference")
            seen = [e for e in w.enemies() if any(
                math.dist(a.position, e.position) <= p.sight_range and line_of_sight(w.map, a.position, e.position)
                for a in allies)]
            update_influence(lm.interference, seen, self.threat, self.net, w.step)

        # phase 3: aggregation and K-step reachability
        self._phase("aggregate")
        graph = lm.aggregate(self.threat, epoch=w.step, interference_enabled=self.interference_enabled)
        self.graph = graph
        self._phase("reach")
        self.cache.update(graph)
        agents = {a.id: a.position for a in allies}
        return graph, reach_table(graph, agents, p.k, self.cache)

    def group(self, algo: str, table) -> GroupAssignment:
        p = self.params
        if algo == "iakrc":
            return group_iakrc(table, int(p.leaders), self.direction)
        if algo == "euclid":
            return group_euclid(table.agents, int(p.leaders), p.euclid_radius)
        return group_vision(table.agents, self.world.map, int(p.leaders), p.vision_range, self.vision_rng)

    def step(self) -> dict:
        w = self.world
        p = self.params
        graph, table = self.observe()
        agents = table.agents
        pairwise = table.pairwise()

        # phase 4: election, assignment, metrics, then the world moves
        self._phase("group")
        record: dict = {
            "step": w.step,
            "alive": {"ally": len(agents), "enemy": len(w.enemies())},
            "groupings": {},
        }
        made = []
        for algo in self.algorithms:
            g = self.group(algo, table)
            made.append((algo, g, build_comm_graph(g, pairwise, p.k)))
        self._phase("metrics")
        for algo, g, comm in made:
            self.snapshots[algo].append(Snapshot(w.step, g, comm))
            deg = comm.degree()
            record["groupings"][algo] = {
                "digest": g.digest(),
                "leaders": g.leaders,
                "groups": [g.groups[l] for l in g.leaders],
                "unassigned": g.unassigned,
                "isolated": sum(1 for d in deg.values() if d == 0),
                "edges": len(comm.edges),
                "lambda2": group_lambda2(g, comm),
                "expansions": g.expansions_total,
            }

        self._phase("world")
        before = {e.id: e for e in w.enemies()}
        feats = {i: featurize(e) for i, e in before.items()} if self.net is not None else {}
        self.world = step_world(w)
        if self.net is not None:
            self._collect_intent(before, feats)
        self.records.append(record)
        return record

    def _collect_intent(self, before: dict, feats: dict) -> None:
        for i, e in before.items():
            now = self.world.entity(i).position
            v = (now[0] - e.position[0], now[1] - e.position[1])
            if v != (0, 0):
                self.samples.append(IntentSample(feats[i], np.array(v, dtype=float)))
        every = int(self.params.finetune_every)
        if every and self.world.step % every == 0 and len(self.samples) >= self.params.batch_size:
            self.net = train_intent(self.net, list(self.samples), 1, lr=self.params.learning_rate,
                                    batch_size=int(self.params.batch_size), rng=self.train_rng)

    def run(self, steps: int, heatmap_dir: Optional[Path] = None) -> "Episode":
        for _ in range(steps):
            if self.finished:
                break
            self.step()
            if heatmap_dir is not None:
                path = heatmap_dir / f"step_{self.records[-1]['step']:05d}.csv"
                path.write_text(heatmap_csv(self.graph, self.layers.geometric), encoding="utf-8")
        return self

    def reports(self) -> list:
        return [structure_report([(s.assignment, s.comm) for s in self.snapshots[a]], a)
                for a in self.algorithms if self.snapshots[a]]

    def summary(self) -> dict:
        w = self.world
        allies, enemies = len(w.allies()), len(w.enemies())
        winner = "ally" if allies and not enemies else "enemy" if enemies and not allies else None
        return {
            "executed_steps": len(self.records),
            "final_step": w.step,
            "alive": {"ally": allies, "enemy": enemies},
            "winner": winner,
            "structure": [r.to_json() for r in self.reports()],
        }


def dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def run_episode(config: RunConfig, algorithms: Optional[Sequence[str]] = None) -> Episode:
    """Execute one configured episode and write its output tree if ``out_dir`` is set."""
    world = load_scenario(config.scenario, seed=config.seed)
    params = resolve_params(world, config.overrides)
    net = IntentNet.load(config.intent_net) if config.intent_net else None
    ep = Episode(world, params, algorithms or (config.algorithm,), config.interference_enabled, net,
                 config.full_rebuild, config.direction)
    out = Path(config.out_dir) if config.out_dir else None
    heat = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if config.emit_heatmaps:
            heat = out / "heatmaps"
            heat.mkdir(exist_ok=True)
    ep.run(config.steps, heat)
    if out is not None:
        header = {
            "scenario": Path(config.scenario).name,
            "algorithms": list(ep.algorithms),
            "steps": config.steps,
            "seed": world.seed,
            "interference_enabled": config.interference_enabled,
            "direction": config.direction,
            "params": params.as_dict(),
        }
        dump_json({"config": header, "records": ep.records, "summary": ep.summary()}, out / "episode.json")
        (out / "structure.csv").write_text(structure_csv(ep.reports()), encoding="utf-8")
        if ep.graph is not None:
            dump_json(layer_dump(ep.layers, ep.graph), out / "layers.json")
    return ep


# ---------------------------------------------------------------------------
# scaling


def scaling_pass(world: WorldState, sizes: list[int], params: Optional[Params] = None,
                 interference_enabled: bool = True, seed: Optional[int] = None):
    """Yield ``(n, expansions_total)`` for one grouping pass per team size."""
    params = params or resolve_params(world)
    threat = ThreatParams.from_params(params)
    gmap = world.map
    enemy_cells = {e.position for e in world.enemies()}
    free = [(x, y) for y in range(gmap.height) for x in range(gmap.width)
            if gmap.kind[y, x] == FREE and (x, y) not in enemy_cells]
    if max(sizes) > len(free):
        raise ValueError(f"map has {len(free)} free cells, cannot place {max(sizes)} agents")
    rng = substream(world.seed if seed is None else seed, "scaling")
    order = [free[int(i)] for i in rng.permutation(len(free))]
    lm = LayeredMap.fully_observed(gmap, params.fifo_capacity)
    if interference_enabled:
        update_influence(lm.interference, world.enemies(), threat)
    graph = lm.aggregate(threat, interference_enabled=interference_enabled)
    for n in sizes:
        agents = {i: order[i] for i in range(n)}
        table = reach_table(graph, agents, params.k)
        g = group_iakrc(table, int(params.leaders))
        yield n, g.expansions_total

