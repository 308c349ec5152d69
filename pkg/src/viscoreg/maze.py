"""Grid mazes: parsing, 9-action dynamics, ray casting and BFS distances.

Cells are indexed ``row * width + col``. A cell's centre sits at
``((col + 0.5) * cell_size, (row + 0.5) * cell_size)``, so the x axis follows
columns and the y axis follows rows (growing downwards).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numba
import numpy as np

# (d_row, d_col); 0 is stay, then clockwise from north
ACTIONS = np.array([(0, 0), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)],
                   dtype=np.int64)
ACTION_NAMES = ("stay", "N", "NE", "E", "SE", "S", "SW", "W", "NW")
N_ACTIONS = len(ACTIONS)

BUNDLED = {"empty5": "empty5.txt", "maze10": "maze10.txt", "arena20": "arena20.txt"}


class MazeError(ValueError):
    pass


@dataclass
class GridMaze:
    width: int
    height: int
    walls: np.ndarray  # bool (height, width), True = wall
    cell_size: float = 1.0
    start_cells: list = field(default_factory=list)
    goal_cells: list = field(default_factory=list)

    def __post_init__(self):
        self.walls = np.asarray(self.walls, dtype=bool)
        if self.walls.shape != (self.height, self.width):
            raise MazeError("wall array does not match width x height")
        self.free_cells = np.flatnonzero(~self.walls.ravel())
        self.free_index = np.full(self.width * self.height, -1, dtype=np.int64)
        self.free_index[self.free_cells] = np.arange(self.free_cells.size)
        self._next = None
        self._dist = None

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    @property
    def n_free(self) -> int:
        return int(self.free_cells.size)

    def is_free(self, cell) -> np.ndarray:
        cell = np.asarray(cell)
        ok = (cell >= 0) & (cell < self.n_cells)
        return ok & ~self.walls.ravel()[np.where(ok, cell, 0)]

    def rowcol(self, cell):
        return np.divmod(np.asarray(cell), self.width)

    def pos(self, cell) -> np.ndarray:
        """Continuous cell-centre coordinates, shape ``(..., 2)``."""
        r, c = self.rowcol(cell)
        return np.stack([(c + 0.5) * self.cell_size, (r + 0.5) * self.cell_size], axis=-1)

    def cell_at(self, x, y) -> np.ndarray:
        """Cell containing each point; points on a face go to the lower index."""
        col = np.ceil(np.asarray(x) / self.cell_size).astype(np.int64) - 1
        row = np.ceil(np.asarray(y) / self.cell_size).astype(np.int64) - 1
        col = np.clip(col, 0, self.width - 1)
        row = np.clip(row, 0, self.height - 1)
        return row * self.width + col

    def check_cells(self, cells, what="cell"):
        cells = np.asarray(cells)
        if not np.all(self.is_free(cells)):
            bad = np.asarray(cells).ravel()[~self.is_free(cells).ravel()][0]
            raise MazeError(f"{what} {int(bad)} is not a free cell")
        return cells

    @property
    def next_table(self) -> np.ndarray:
        """``next_table[cell, a]`` for every cell (wall rows map to themselves)."""
        if self._next is None:
            self._next = _transition_table(self.walls)
        return self._next

    def distances(self) -> np.ndarray:
        """All-pairs hop counts over free cells, ``[free_index(s), free_index(g)]``."""
        if self._dist is None:
            self._dist = np.stack([bfs_distance(self, g)[self.free_cells] for g in self.free_cells], axis=1)
        return self._dist

    def to_text(self) -> str:
        rows = []
        starts, goals = set(self.start_cells), set(self.goal_cells)
        for r in range(self.height):
            line = []
            for c in range(self.width):
                k = r * self.width + c
                line.append("#" if self.walls[r, c] else "S" if k in starts else "G" if k in goals else ".")
            rows.append("".join(line))
        return "\n".join(rows) + "\n"


def load_maze(text: str) -> GridMaze:
    """Parse ``#`` walls, ``.`` free, ``S`` start and ``G`` goal cells."""
    lines = [ln.rstrip("\r") for ln in text.split("\n")]
    while lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MazeError("empty maze text")
    width = len(lines[0])
    if any(len(ln) != width for ln in lines):
        raise MazeError("maze text is not rectangular")
    unknown = set("".join(lines)) - set("#.SG")
    if unknown:
        raise MazeError(f"unknown maze characters {sorted(unknown)}")
    grid = np.array([list(ln) for ln in lines])
    walls = grid == "#"
    if walls.all():
        raise MazeError("maze has no free cell")
    if not (walls[0].all() and walls[-1].all() and walls[:, 0].all() and walls[:, -1].all()):
        raise MazeError("outer border must be wall")
    flat = grid.ravel()
    maze = GridMaze(width, len(lines), walls, 1.0,
                    [int(k) for k in np.flatnonzero(flat == "S")],
                    [int(k) for k in np.flatnonzero(flat == "G")])
    if not _four_connected(walls):
        raise MazeError("free region is not 4-connected")
    return maze


def load_maze_file(path) -> GridMaze:
    return load_maze(Path(path).read_text(encoding="utf-8"))


def bundled_maze(name: str) -> GridMaze:
    if name not in BUNDLED:
        raise MazeError(f"unknown bundled maze {name!r}; choose from {sorted(BUNDLED)}")
    text = resources.files("viscoreg.assets").joinpath(BUNDLED[name]).read_text(encoding="utf-8")
    return load_maze(text)


def resolve_maze(spec: str) -> GridMaze:
    """A bundled maze name or a path to an ASCII maze file."""
    if spec in BUNDLED:
        return bundled_maze(spec)
    p = Path(spec)
    if not p.is_file():
        raise MazeError(f"maze file {spec!r} not found")
    return load_maze_file(p)


def _four_connected(walls) -> bool:
    free = ~walls
    start = tuple(np.argwhere(free)[0])
    seen = np.zeros_like(free)
    seen[start] = True
    todo = deque([start])
    while todo:
        r, c = todo.popleft()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = r + dr, c + dc
            if 0 <= a < walls.shape[0] and 0 <= b < walls.shape[1] and free[a, b] and not seen[a, b]:
                seen[a, b] = True
                todo.append((a, b))
    return bool(seen.sum() == free.sum())


def _transition_table(walls) -> np.ndarray:
    h, w = walls.shape
    rows, cols = np.divmod(np.arange(h * w), w)
    out = np.empty((h * w, N_ACTIONS), dtype=np.int64)

    def wall(r, c):
        inside = (r >= 0) & (r < h) & (c >= 0) & (c < w)
        return ~inside | walls[np.clip(r, 0, h - 1), np.clip(c, 0, w - 1)]

    for a, (dr, dc) in enumerate(ACTIONS):
        r2, c2 = rows + dr, cols + dc
        blocked = wall(r2, c2)
        if dr and dc:
            # no corner cutting
            blocked |= wall(rows + dr, cols) | wall(rows, cols + dc)
        out[:, a] = np.where(blocked, rows * w + cols, r2 * w + c2)
    return out


def step(maze: GridMaze, s, a):
    """Next cell; wall hits and corner cuts leave the agent in place."""
    return maze.next_table[np.asarray(s), np.asarray(a)]


def reward(s, g):
    """Sparse reward: 0 on the goal, -1 elsewhere."""
    return np.where(np.asarray(s) == np.asarray(g), 0, -1)


def bfs_distance(maze: GridMaze, g: int) -> np.ndarray:
    """Hop counts to ``g`` for every cell under the 9-action dynamics (inf if unreachable)."""
    maze.check_cells(g, "goal")
    nxt = maze.next_table
    dist = np.full(maze.n_cells, np.inf)
    dist[g] = 0.0
    # moves are symmetric (the corner rule is), so a forward BFS from g works
    todo = deque([int(g)])
    while todo:
        u = todo.popleft()
        for v in nxt[u, 1:]:
            if dist[v] == np.inf:
                dist[v] = dist[u] + 1
                todo.append(int(v))
    return dist


@numba.njit(cache=True)
def _dda(walls, cs, xs, ys, dxs, dys):
    h, w = walls.shape
    out = np.empty(xs.size)
    for k in range(xs.size):
        x, y, dx, dy = xs[k] / cs, ys[k] / cs, dxs[k], dys[k]
        ix, iy = int(np.floor(x)), int(np.floor(y))
        sx = 1 if dx > 0 else -1
        sy = 1 if dy > 0 else -1
        tmx = ((ix + 1 - x) / dx if dx > 0 else (x - ix) / -dx) if dx != 0 else np.inf
        tmy = ((iy + 1 - y) / dy if dy > 0 else (y - iy) / -dy) if dy != 0 else np.inf
        tdx = 1.0 / abs(dx) if dx != 0 else np.inf
        tdy = 1.0 / abs(dy) if dy != 0 else np.inf
        t = 0.0
        while True:
            if tmx <= tmy:
                ix += sx
                t = tmx
                tmx += tdx
            else:
                iy += sy
                t = tmy
                tmy += tdy
            if ix < 0 or ix >= w or iy < 0 or iy >= h or walls[iy, ix]:
                break
        out[k] = t * cs
    return out


class BoundaryDistance:
    """Ray cast to the first wall face, callable on flat ``(x, y, ux, uy)`` arrays."""

    def __init__(self, maze: GridMaze, reach=None):
        self.maze = maze
        self._walls = np.ascontiguousarray(maze.walls)
        # optional lower bound on the wall distance of the query origins
        self.reach = reach

    def __call__(self, x, y, ux, uy):
        x, y, ux, uy = (np.ascontiguousarray(a, dtype=float).ravel()
                        for a in np.broadcast_arrays(x, y, ux, uy))
        if np.any((ux == 0) & (uy == 0)):
            raise ValueError("zero-length direction")
        return _dda(self._walls, float(self.maze.cell_size), x, y, ux, uy)


def boundary_distance(maze: GridMaze, s, direction) -> np.ndarray:
    """Distance from the centre of cell ``s`` along unit ``direction`` to the first wall face."""
    d = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(d, axis=-1)
    if np.any(norm == 0):
        raise ValueError("zero-length direction")
    if np.any(np.abs(norm - 1.0) > 1e-9):
        raise ValueError("direction must be a unit vector")
    p = maze.pos(maze.check_cells(s, "state"))
    p, d = np.broadcast_arrays(p, d)
    out = BoundaryDistance(maze)(p[..., 0], p[..., 1], d[..., 0], d[..., 1])
    return out.reshape(p.shape[:-1]) if p.ndim > 1 else float(out[0])


# behaviour policies -------------------------------------------------------------

@dataclass
class Trajectory:
    cells: np.ndarray  # length T + 1
    actions: np.ndarray  # length T
    goal: int = -1  # behaviour goal (noisy expert), -1 otherwise

    def __len__(self):
        return int(self.actions.size)


def greedy_action(maze: GridMaze, s: int, dist_to_goal: np.ndarray) -> int:
    """Lowest-index action that most decreases the hop count; stay once there."""
    if dist_to_goal[s] == 0:
        return 0
    nxt = maze.next_table[s]
    return int(np.argmin(dist_to_goal[nxt[1:]])) + 1


def generate_dataset(maze: GridMaze, behavior: str = "noisy_expert", n_traj: int = 100,
                     traj_len: int = 50, seed: int = 0, epsilon: float = 0.2,
                     starts: str = "free") -> list:
    """Roll out ``n_traj`` trajectories of ``traj_len`` steps.

    ``random_walk`` picks actions uniformly. ``noisy_expert`` draws one free
    goal per trajectory and follows BFS shortest paths to it, taking a uniform
    action with probability ``epsilon``. Starts are uniform over all free
    cells (``starts="free"``) or over the marked start cells (``"marked"``).
    """
    if n_traj < 1 or traj_len < 1:
        raise ValueError("n_traj and traj_len must be >= 1")
    if behavior not in ("random_walk", "noisy_expert"):
        raise ValueError(f"unknown behavior {behavior!r}")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if starts not in ("free", "marked"):
        raise ValueError(f"unknown start mode {starts!r}")
    starts = np.asarray(maze.free_cells if starts == "free" else maze.start_cells, dtype=np.int64)
    if starts.size == 0:
        raise MazeError("maze has no free start cell")
    rng = np.random.default_rng(seed)
    nxt = maze.next_table
    dist_cache = {}
    out = []
    for _ in range(n_traj):
        s = int(rng.choice(starts))
        goal = -1
        if behavior == "noisy_expert":
            goal = int(rng.choice(maze.free_cells))
            if goal not in dist_cache:
                dist_cache[goal] = bfs_distance(maze, goal)
        noise = rng.random(traj_len)
        rand_a = rng.integers(0, N_ACTIONS, traj_len)
        cells = np.empty(traj_len + 1, dtype=np.int64)
        acts = np.empty(traj_len, dtype=np.int64)
        cells[0] = s
        for t in range(traj_len):
            if behavior == "random_walk" or noise[t] < epsilon:
                a = int(rand_a[t])
            else:
                a = greedy_action(maze, s, dist_cache[goal])
            acts[t] = a
            s = int(nxt[s, a])
            cells[t + 1] = s
        out.append(Trajectory(cells, acts, goal))
    return out


def gradient_stencil(maze: GridMaze):
    """Finite-difference stencil for per-cell gradients ``(d/dx, d/dy)``.

    Returns ``plus, minus, spacing``, each shaped ``(n_cells, 2)`` (axis 0 is
    x along columns, axis 1 is y along rows): the gradient along an axis is
    ``(V[plus] - V[minus]) / spacing``. Central when both neighbours are free,
    one-sided next to a wall, and ``spacing == 0`` (component set to zero) when
    the axis has no free neighbour.
    """
    w, cs = maze.width, maze.cell_size
    cells = np.arange(maze.n_cells)
    free = ~maze.walls.ravel()
    plus = np.tile(cells[:, None], (1, 2))
    minus = plus.copy()
    spacing = np.zeros((maze.n_cells, 2))
    for axis, off in ((0, 1), (1, w)):
        hi = np.clip(cells + off, 0, maze.n_cells - 1)
        lo = np.clip(cells - off, 0, maze.n_cells - 1)
        hi_ok, lo_ok = free[hi], free[lo]
        plus[:, axis] = np.where(hi_ok, hi, cells)
        minus[:, axis] = np.where(lo_ok, lo, cells)
        spacing[:, axis] = (hi_ok.astype(float) + lo_ok.astype(float)) * cs
    spacing[~free] = 0.0
    return plus, minus, spacing
