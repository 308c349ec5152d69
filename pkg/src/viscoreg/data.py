"""Hindsight goal relabeling and the JSON-lines dataset format."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .maze import GridMaze, reward

STRATEGIES = ("cur", "geom", "traj", "rand")


def check_ratios(ratios) -> np.ndarray:
    r = np.asarray(ratios, dtype=float)
    if r.shape != (4,):
        raise ValueError("ratios must have four entries (cur, geom, traj, rand)")
    if np.any(r < 0) or abs(r.sum() - 1.0) > 1e-9:
        raise ValueError(f"ratios {[float(v) for v in r]} must be nonnegative and sum to 1")
    return r


@dataclass
class Dataset:
    """Relabeled transitions as parallel integer arrays.

    ``r`` and ``terminal`` are evaluated on the current cell: a sample is
    terminal with reward 0 when ``s == g`` and costs -1 otherwise.
    """

    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    g: np.ndarray
    r: np.ndarray
    strategy: np.ndarray
    seed: int = 0
    ratios: tuple = (1.0, 0.0, 0.0, 0.0)
    gamma_geom: float = 0.99

    def __post_init__(self):
        for name in ("s", "a", "s_next", "g", "r", "strategy"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        n = self.s.size
        if any(getattr(self, k).size != n for k in ("a", "s_next", "g", "r", "strategy")):
            raise ValueError("dataset columns differ in length")
        self.ratios = tuple(float(v) for v in check_ratios(self.ratios))

    def __len__(self):
        return int(self.s.size)

    @property
    def terminal(self) -> np.ndarray:
        return self.s == self.g

    def validate(self, maze: GridMaze) -> "Dataset":
        for name in ("s", "s_next", "g"):
            maze.check_cells(getattr(self, name), name)
        if np.any((self.r != 0) & (self.r != -1)):
            raise ValueError("rewards must be 0 or -1")
        return self


def relabel(trajectories, ratios=(0.2, 0.5, 0.0, 0.3), gamma_geom: float = 0.99,
            n_samples: int | None = None, seed: int = 0, maze: GridMaze | None = None) -> Dataset:
    """Attach a goal to each sampled transition.

    With ``n_samples=None`` every transition is used once, in order; otherwise
    transitions are drawn uniformly. The goal strategy is drawn from
    ``ratios``: ``cur`` uses the current cell, ``geom`` the cell a
    Geometric(1 - gamma_geom) number of steps ahead (cut at the trajectory
    end), ``traj`` a uniform later cell of the same trajectory and ``rand`` a
    uniform free cell of ``maze``.
    """
    r = check_ratios(ratios)
    if not trajectories:
        raise ValueError("no trajectories to relabel")
    if r[3] > 0 and maze is None:
        raise ValueError("random goals need the maze")
    if not 0 < gamma_geom < 1:
        raise ValueError("gamma_geom must lie in (0, 1)")
    lengths = np.array([len(t) for t in trajectories], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    if n_samples is None:
        flat = np.arange(total)
    else:
        flat = rng.integers(0, total, int(n_samples))
    n = flat.size
    traj_id = np.searchsorted(offsets, flat, side="right") - 1
    t = flat - offsets[traj_id]
    strategy = rng.choice(4, size=n, p=r)
    geo = rng.geometric(1.0 - gamma_geom, size=n)
    uni = rng.random(n)
    rand_goal = rng.integers(0, maze.n_free, n) if maze is not None else np.zeros(n, dtype=np.int64)
    cells = [tr.cells for tr in trajectories]
    s = np.empty(n, dtype=np.int64)
    a = np.empty(n, dtype=np.int64)
    s_next = np.empty(n, dtype=np.int64)
    g = np.empty(n, dtype=np.int64)
    for k in range(n):
        c = cells[traj_id[k]]
        tk = int(t[k])
        end = c.size - 1
        s[k], s_next[k] = c[tk], c[tk + 1]
        a[k] = trajectories[traj_id[k]].actions[tk]
        st = strategy[k]
        if st == 0:
            g[k] = c[tk]
        elif st == 1:
            g[k] = c[min(tk + int(geo[k]), end)]
        elif st == 2:
            g[k] = c[tk + 1 + int(uni[k] * (end - tk))]
        else:
            g[k] = maze.free_cells[rand_goal[k]]
    return Dataset(s, a, s_next, g, reward(s, g), strategy, seed, tuple(r), gamma_geom)


def from_arrays(s, a, s_next, g, seed=0) -> Dataset:
    s, g = np.asarray(s), np.asarray(g)
    return Dataset(s, a, s_next, g, reward(s, g), np.zeros(s.size, dtype=np.int64), seed)


def write_jsonl(ds: Dataset, path, maze: GridMaze | None = None) -> None:
    header = {"type": "header", "seed": int(ds.seed), "ratios": list(ds.ratios),
              "gamma_geom": ds.gamma_geom, "n": len(ds)}
    if maze is not None:
        header.update(width=maze.width, height=maze.height)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for k in range(len(ds)):
            rec = {"s": int(ds.s[k]), "a": int(ds.a[k]), "s_next": int(ds.s_next[k]),
                   "g": int(ds.g[k]), "r": int(ds.r[k]), "strategy": STRATEGIES[ds.strategy[k]]}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    header = json.loads(lines[0])
    if header.get("type") != "header":
        raise ValueError(f"{path}: first record must be the header")
    recs = [json.loads(ln) for ln in lines[1:]]
    if len(recs) != header.get("n", len(recs)):
        raise ValueError(f"{path}: header announces {header['n']} records, found {len(recs)}")
    col = {k: np.array([rec[k] for rec in recs], dtype=np.int64) for k in ("s", "a", "s_next", "g", "r")}
    strat = np.array([STRATEGIES.index(rec.get("strategy", "cur")) for rec in recs], dtype=np.int64)
    ds = Dataset(col["s"], col["a"], col["s_next"], col["g"], col["r"], strat, header["seed"],
                 tuple(header["ratios"]), header.get("gamma_geom", 0.99))
    if np.any(ds.r != reward(ds.s, ds.g)):
        raise ValueError(f"{path}: rewards disagree with goals")
    return ds
