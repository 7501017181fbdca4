"""Deterministic scenario generators; the packaged scenario files are produced by these."""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .world import substream


def random_static_rows(width: int, height: int, density: float, rng: np.random.Generator) -> list[str]:
    grid = rng.random((height, width)) < density
    return ["".join("#" if v else "." for v in row) for row in grid]


def _render(header: list[str], grid: np.ndarray) -> str:
    rows = ["".join(str(v) for v in row) for row in grid]
    return "\n".join(header + ["map:"] + rows) + "\n"


def maze_text(seed: int = 7, size: int = 32, room: int = 6, team: int = 12, spawn_radius: int = 6) -> str:
    """Rooms on a lattice joined by a random spanning tree of two-cell gaps plus a few extra gaps.

    Each team starts clustered around a spawn point, allies on the west
    edge and enemies on the east edge. Two of the gaps carry doors on
    different schedules.
    """
    rng = substream(seed, "maze")
    grid = np.full((size, size), "#", dtype="<U1")
    step = room + 1
    n = (size - 1) // step
    # the last row and column of rooms stretch to the border
    lo = [1 + r * step for r in range(n)]
    hi = [lo[r] + room for r in range(n - 1)] + [size - 1]
    for ry in range(n):
        for rx in range(n):
            grid[lo[ry]:hi[ry], lo[rx]:hi[rx]] = "."
    walls = []  # ((rx, ry), horizontal?) wall between room and its east or south neighbour
    for ry in range(n):
        for rx in range(n):
            if rx + 1 < n:
                walls.append(((rx, ry), True))
            if ry + 1 < n:
                walls.append(((rx, ry), False))
    parent = list(range(n * n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    opened = []
    for k in rng.permutation(len(walls)):
        (rx, ry), east = walls[int(k)]
        a = ry * n + rx
        b = a + 1 if east else a + n
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            opened.append(walls[int(k)])
        elif rng.random() < 0.35:
            opened.append(walls[int(k)])
    gaps = []
    for (rx, ry), east in opened:
        off = int(rng.integers(0, room - 1))
        if east:
            x = 1 + rx * step + room
            cells = [(x, 1 + ry * step + off), (x, 1 + ry * step + off + 1)]
        else:
            y = 1 + ry * step + room
            cells = [(1 + rx * step + off, y), (1 + rx * step + off + 1, y)]
        for x, y in cells:
            grid[y, x] = "."
        gaps.append(cells)
    door_gaps = [gaps[int(k)] for k in rng.choice(len(gaps), size=2, replace=False)]
    for letter, cells in zip("AB", door_gaps):
        for x, y in cells:
            grid[y, x] = letter

    def spawn(center: tuple[int, int]) -> list[tuple[int, int]]:
        # free cells within a short walk of the spawn point, sampled without replacement
        reach = {center: 0}
        queue = [center]
        for c in queue:
            if reach[c] >= spawn_radius:
                continue
            for dx, dy in ((1, 0), (0, 1), (-1, 0), (0, -1)):
                n = (c[0] + dx, c[1] + dy)
                if 0 <= n[0] < size and 0 <= n[1] < size and grid[n[1], n[0]] == "." and n not in reach:
                    reach[n] = reach[c] + 1
                    queue.append(n)
        free = sorted(reach)
        picks = rng.choice(len(free), size=team, replace=False)
        return sorted(free[int(i)] for i in picks)

    mid = lo[n // 2]
    allies = spawn((lo[0] + 2, mid))
    enemies = spawn((hi[-1] - 3, mid))
    header = [
        f"; {size}x{size} room maze, {team} v {team}, generated with seed {seed}",
        f"seed={seed}",
        "door A period=6 open=0..4",
        "door B period=8 open=2..6",
    ]
    header += [f"ally {x},{y} advance" for x, y in allies]
    header += [f"enemy {x},{y} advance" for x, y in enemies]
    return _render(header, grid)


def wall_fixture_text(wall_length: int = 7, width: int = 12, height: int = 10) -> str:
    """Two stationary allies one cell either side of a wall hanging from the top edge.

    The walking detour between them is ``2 * wall_length + 2`` steps. A third
    ally faces the wall from the west edge so the whole wall is observed on the
    first step; from next to the wall the lower wall cells are occluded by the
    upper ones and would stay unknown (and passable).
    """
    if not 2 <= wall_length < height:
        raise ValueError("wall_length must leave a gap at the bottom")
    if wall_length > 11:
        raise ValueError("wall too long for the observer to see whole")
    grid = np.full((height, width), ".", dtype="<U1")
    grid[:wall_length, 5] = "#"
    watch = (wall_length - 1) // 2
    header = [
        f"; wall of length {wall_length} between allies 0 and 1; detour {2 * wall_length + 2}",
        "seed=1",
        "leaders=1",
        "ally 4,0 patrol waypoints=4,0",
        "ally 6,0 patrol waypoints=6,0",
        f"ally 0,{watch} patrol waypoints=0,{watch}",
        f"enemy {width - 1},{height - 1} patrol waypoints={width - 1},{height - 1}",
    ]
    return _render(header, grid)


def door_corridor_text() -> str:
    header = [
        "; one-row corridor closed by a timed door",
        "seed=3",
        "door A period=4 open=2..4",
        "ally 0,0 patrol waypoints=4,0",
        "enemy 4,2 patrol waypoints=4,2",
    ]
    grid = np.array([list("..A.."), list("#####"), list("....."), ])
    return _render(header, grid)


def scaling_text(seed: int = 11, size: int = 64, density: float = 0.15, enemies: int = 8) -> str:
    """Open 64x64 field with scattered obstacles and stationary enemies."""
    rng = substream(seed, "scaling-map")
    grid = np.where(rng.random((size, size)) < density, "#", ".").astype("<U1")
    free = [(x, y) for y in range(size) for x in range(size) if grid[y, x] == "."]
    picks = sorted(free[int(i)] for i in rng.choice(len(free), size=enemies, replace=False))
    header = [f"; {size}x{size} obstacle field with {enemies} adversaries", f"seed={seed}"]
    header += [f"enemy {x},{y} patrol waypoints={x},{y}" for x, y in picks]
    return _render(header, grid)


PACKAGED = {
    "maze32": maze_text,
    "wall_long": lambda: wall_fixture_text(7),
    "wall_short": lambda: wall_fixture_text(3),
    "door_corridor": door_corridor_text,
    "scaling64": scaling_text,
}


def scenario_path(name: str) -> Path:
    """Path of a packaged scenario by short name."""
    if name not in PACKAGED:
        raise KeyError(f"no packaged scenario {name!r}; have {sorted(PACKAGED)}")
    return Path(str(resources.files("iakrc") / "scenarios" / f"{name}.txt"))


def write_packaged(directory: Optional[Path] = None) -> list[Path]:
    directory = Path(directory) if directory else Path(str(resources.files("iakrc") / "scenarios"))
    out = []
    for name, make in PACKAGED.items():
        path = directory / f"{name}.txt"
        path.write_text(make(), encoding="utf-8")
        out.append(path)
    return out
