"""Grid fields, continuous obstacle scenes and their rasterization.

Nodes sit at cell centres, ``x_i = xmin + (i + 0.5) h``, so scene edges that
fall on multiples of ``h`` coincide with cell faces. Every solver in this
subpackage imposes its boundary conditions on those faces.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

FREE, OBSTACLE, GOAL, BORDER = 0, 1, 2, 3

Rect = tuple  # (x0, x1, y0, y1)


@dataclass
class ObstacleScene:
    """Closed rectangular arena with axis-aligned obstacles and a goal box.

    ``bc`` selects what walls (obstacles and arena border) do: ``"absorbing"``
    pins the desirability to a near-zero floor, ``"reflecting"`` imposes zero
    flux.
    """

    extent: Rect
    obstacles: list = field(default_factory=list)
    goal: Rect | None = None
    bc: str = "absorbing"

    def __post_init__(self):
        self.extent = tuple(float(v) for v in self.extent)
        self.obstacles = [tuple(float(v) for v in r) for r in self.obstacles]
        if self.goal is not None:
            self.goal = tuple(float(v) for v in self.goal)
        x0, x1, y0, y1 = self.extent
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"degenerate arena extent {self.extent}")
        if self.bc not in ("absorbing", "reflecting"):
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        if self.goal is not None:
            for r in self.obstacles:
                if _rects_overlap(r, self.goal):
                    raise ValueError("goal region intersects an obstacle")

    @property
    def diameter(self) -> float:
        x0, x1, y0, y1 = self.extent
        return float(np.hypot(x1 - x0, y1 - y0))

    def is_free(self, x, y):
        """Vectorized membership test for the open free region (goal included)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x0, x1, y0, y1 = self.extent
        inside = (x > x0) & (x < x1) & (y > y0) & (y < y1)
        for ox0, ox1, oy0, oy1 in self.obstacles:
            inside &= ~((x >= ox0) & (x <= ox1) & (y >= oy0) & (y <= oy1))
        return inside

    def in_goal(self, x, y):
        if self.goal is None:
            return np.zeros(np.shape(x), dtype=bool)
        gx0, gx1, gy0, gy1 = self.goal
        return (x >= gx0) & (x <= gx1) & (y >= gy0) & (y <= gy1)

    def boundary_distance(self, x, y, dx, dy):
        """Distance along unit directions ``(dx, dy)`` to the first wall.

        Slab intersection against the arena box (exit) and every obstacle
        (entry). Arrays broadcast.
        """
        x, y, dx, dy = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, dx, dy)))
        x0, x1, y0, y1 = self.extent
        with np.errstate(divide="ignore", invalid="ignore"):
            tx = np.where(dx > 0, (x1 - x) / dx, np.where(dx < 0, (x0 - x) / dx, np.inf))
            ty = np.where(dy > 0, (y1 - y) / dy, np.where(dy < 0, (y0 - y) / dy, np.inf))
            dist = np.minimum(tx, ty)
            for ox0, ox1, oy0, oy1 in self.obstacles:
                inv_x = 1.0 / dx
                inv_y = 1.0 / dy
                ta, tb = (ox0 - x) * inv_x, (ox1 - x) * inv_x
                tc, td = (oy0 - y) * inv_y, (oy1 - y) * inv_y
                # dx == 0 gives nan when the origin lies on a slab plane
                lo_x = np.where(dx == 0, np.where((x >= ox0) & (x <= ox1), -np.inf, np.inf), np.minimum(ta, tb))
                hi_x = np.where(dx == 0, np.where((x >= ox0) & (x <= ox1), np.inf, -np.inf), np.maximum(ta, tb))
                lo_y = np.where(dy == 0, np.where((y >= oy0) & (y <= oy1), -np.inf, np.inf), np.minimum(tc, td))
                hi_y = np.where(dy == 0, np.where((y >= oy0) & (y <= oy1), np.inf, -np.inf), np.maximum(tc, td))
                t_in = np.maximum(lo_x, lo_y)
                t_out = np.minimum(hi_x, hi_y)
                hit = (t_in <= t_out) & (t_in >= 0)
                dist = np.where(hit, np.minimum(dist, t_in), dist)
        return dist

    def distance_to_obstacles(self, x, y):
        """Euclidean distance from points to the nearest obstacle rectangle."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        best = np.full(np.broadcast(x, y).shape, np.inf)
        for r in self.obstacles:
            best = np.minimum(best, _rect_distance(r, x, y))
        return best


def _rects_overlap(a, b) -> bool:
    return a[0] < b[1] and b[0] < a[1] and a[2] < b[3] and b[2] < a[3]


def _rect_distance(r, x, y):
    x0, x1, y0, y1 = r
    ddx = np.maximum(np.maximum(x0 - x, 0.0), x - x1)
    ddy = np.maximum(np.maximum(y0 - y, 0.0), y - y1)
    return np.hypot(ddx, ddy)


def _rect_nearest(r, x, y):
    x0, x1, y0, y1 = r
    return np.clip(x, x0, x1), np.clip(y, y0, y1)


def obstacle_scene(bc: str = "absorbing") -> ObstacleScene:
    """Unit arena, one square obstacle above centre, goal box at the bottom."""
    return ObstacleScene(
        extent=(0.0, 1.0, 0.0, 1.0),
        obstacles=[(0.375, 0.625, 0.4375, 0.6875)],
        goal=(0.4375, 0.5625, 0.0625, 0.1875),
        bc=bc,
    )


def strip_scene(length: float = 1.0, goal_depth: float = 0.0625, width: float = 0.0625,
                bc: str = "reflecting") -> ObstacleScene:
    """Thin strip whose goal occupies ``x <= 0``; reflecting sides make it 1D."""
    return ObstacleScene(
        extent=(-goal_depth, length, 0.0, width),
        goal=(-goal_depth, 0.0, 0.0, width),
        bc=bc,
    )


@dataclass
class ScalarField2D:
    """Cell-centred scalar field; ``data[i, j]`` lives at ``(x_i, y_j)``."""

    data: np.ndarray
    mask: np.ndarray
    h: float
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.mask = np.asarray(self.mask, dtype=np.int8)
        if self.data.shape != self.mask.shape or self.data.ndim != 2:
            raise ValueError("data and mask must be matching 2D arrays")
        self.h = float(self.h)
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def nx(self) -> int:
        return self.data.shape[0]

    @property
    def ny(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def coords(self):
        xs = self.origin[0] + (np.arange(self.nx) + 0.5) * self.h
        ys = self.origin[1] + (np.arange(self.ny) + 0.5) * self.h
        return np.meshgrid(xs, ys, indexing="ij")

    def node_at(self, x, y):
        """Indices of the cells containing the points (clipped to the grid)."""
        i = np.floor((np.asarray(x) - self.origin[0]) / self.h).astype(int)
        j = np.floor((np.asarray(y) - self.origin[1]) / self.h).astype(int)
        return np.clip(i, 0, self.nx - 1), np.clip(j, 0, self.ny - 1)

    @property
    def valid(self):
        """Free or goal nodes, i.e. where the field is defined."""
        return (self.mask == FREE) | (self.mask == GOAL)

    def with_data(self, data) -> "ScalarField2D":
        return ScalarField2D(np.asarray(data, dtype=float), self.mask.copy(), self.h, self.origin)


def rasterize(scene: ObstacleScene, h: float) -> ScalarField2D:
    """Classify cell centres of ``scene`` at spacing ``h``.

    Raises when the arena is not an integer number of cells wide, since the
    face-aligned boundary treatment relies on it.
    """
    x0, x1, y0, y1 = scene.extent
    nx_f, ny_f = (x1 - x0) / h, (y1 - y0) / h
    nx, ny = int(round(nx_f)), int(round(ny_f))
    if abs(nx - nx_f) > 1e-6 or abs(ny - ny_f) > 1e-6 or nx < 1 or ny < 1:
        raise ValueError(f"arena extent is not a multiple of h={h}")
    field_ = ScalarField2D(np.zeros((nx, ny)), np.zeros((nx, ny), dtype=np.int8), h, (x0, y0))
    X, Y = field_.coords()
    mask = np.full((nx, ny), FREE, dtype=np.int8)
    for r in scene.obstacles:
        mask[(X > r[0]) & (X < r[1]) & (Y > r[2]) & (Y < r[3])] = OBSTACLE
    if scene.goal is not None:
        g = scene.goal
        mask[(X > g[0]) & (X < g[1]) & (Y > g[2]) & (Y < g[3])] = GOAL
    field_.mask = mask
    return field_


def obstacle_band(scene: ObstacleScene, grid: ScalarField2D, width: float):
    """Free nodes within ``width`` of an obstacle, plus outward unit normals."""
    X, Y = grid.coords()
    band = (grid.mask == FREE) & (scene.distance_to_obstacles(X, Y) <= width)
    normals = np.zeros(X.shape + (2,))
    best = np.full(X.shape, np.inf)
    for r in scene.obstacles:
        d = _rect_distance(r, X, Y)
        px, py = _rect_nearest(r, X, Y)
        closer = d < best
        best = np.where(closer, d, best)
        with np.errstate(invalid="ignore", divide="ignore"):
            n = np.stack([(X - px) / d, (Y - py) / d], axis=-1)
        normals = np.where(closer[..., None], n, normals)
    return band, normals


def compare_fields(a: ScalarField2D, b: ScalarField2D, mask=None):
    """L-inf and relative L2 differences over nodes valid in both fields."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    sel = a.valid & b.valid
    if mask is not None:
        sel &= np.asarray(mask, dtype=bool)
    diff = np.subtract(a.data, b.data, out=np.zeros(a.shape), where=sel)
    d = diff[sel]
    if d.size == 0:
        raise ValueError("no common nodes to compare")
    ref = b.data[sel]
    denom = np.linalg.norm(ref)
    return {
        "linf": float(np.max(np.abs(d))),
        "rel_l2": float(np.linalg.norm(d) / denom) if denom > 0 else float(np.linalg.norm(d)),
        "n_nodes": int(d.size),
        "diff": a.with_data(diff),
    }


def write_field_csv(fld: ScalarField2D, path, mask_path=None) -> None:
    """Header row ``nx,ny,h,x0,y0`` then ``ny`` rows of ``nx`` values each."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["nx", "ny", "h", "x0", "y0"])
        w.writerow([fld.nx, fld.ny, repr(fld.h), repr(fld.origin[0]), repr(fld.origin[1])])
        for j in range(fld.ny):
            w.writerow([repr(float(v)) for v in fld.data[:, j]])
    if mask_path is not None:
        with open(mask_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["nx", "ny", "h", "x0", "y0"])
            w.writerow([fld.nx, fld.ny, repr(fld.h), repr(fld.origin[0]), repr(fld.origin[1])])
            for j in range(fld.ny):
                w.writerow([int(v) for v in fld.mask[:, j]])


def read_field_csv(path, mask_path=None) -> ScalarField2D:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    nx, ny = int(rows[1][0]), int(rows[1][1])
    h, x0, y0 = (float(v) for v in rows[1][2:5])
    data = np.array([[float(v) for v in r] for r in rows[2:2 + ny]]).T
    mask = np.zeros((nx, ny), dtype=np.int8)
    if mask_path is not None:
        with open(mask_path, newline="") as fh:
            mrows = list(csv.reader(fh))
        mask = np.array([[int(v) for v in r] for r in mrows[2:2 + ny]], dtype=np.int8).T
    return ScalarField2D(data, mask, h, (x0, y0))
