"""Greedy policies, rollouts, value geometry and the K / nu ablation."""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .maze import GridMaze, bfs_distance
from .pde.fields import FREE, GOAL, OBSTACLE, ScalarField2D, write_field_csv
from .regularizers import FKConfig, hinge_slack, sample_neighbors
from .value import GoalValueEstimator, value_gradient

REPORT_COLUMNS = ("sweep_param", "value", "seed", "success_rate", "mean_steps", "fk_variance",
                  "hinge_slack", "alignment_score")
K_GRID = (1, 5, 10, 20)
NU_GRID = (1e-4, 1e-3, 1e-2, 1e-1)


def extract_policy(table, maze: GridMaze, g: int) -> np.ndarray:
    """Greedy action per cell for goal ``g`` (``-1`` on walls).

    Each free cell takes the move with the highest ``V(step(s, a), g)``,
    lowest index on ties. Staying is chosen at the goal and when all nine
    actions tie.
    """
    maze.check_cells(g, "goal")
    fi = maze.free_index
    cells = maze.free_cells
    nxt = maze.next_table[cells]
    q = table[fi[nxt], fi[g]]
    moves = np.argmax(q[:, 1:], axis=1) + 1
    all_tied = np.all(q == q[:, :1], axis=1)
    act = np.where(all_tied | (cells == g), 0, moves)
    out = np.full(maze.n_cells, -1, dtype=np.int64)
    out[cells] = act
    return out


@dataclass
class Rollout:
    success: bool
    steps: int
    trajectory: list = field(default_factory=list)


def rollout(maze: GridMaze, policy, s0: int, g: int, max_steps: int) -> Rollout:
    maze.check_cells([s0, g], "cell")
    s = int(s0)
    traj = [s]
    for t in range(int(max_steps) + 1):
        if s == g:
            return Rollout(True, t, traj)
        if t == max_steps:
            break
        s = int(maze.next_table[s, policy[s]])
        traj.append(s)
    return Rollout(False, int(max_steps), traj)


@dataclass
class EvalResult:
    success_rate: float
    tasks: list  # dicts: s0, g, bfs, max_steps, success, steps

    @property
    def mean_steps(self) -> float:
        done = [t["steps"] for t in self.tasks if t["success"]]
        return float(np.mean(done)) if done else float("nan")


def make_tasks(maze: GridMaze, n_tasks: int | None = None, seed: int = 0) -> list:
    """Reachable ``(s0, g)`` pairs with ``s0 != g`` where possible.

    ``n_tasks=None`` gives one task per free cell as goal; otherwise goals are
    drawn uniformly. Deterministic in ``seed``.
    """
    rng = np.random.default_rng(seed)
    free = maze.free_cells
    goals = free if n_tasks is None else rng.choice(free, int(n_tasks))
    dist = maze.distances()
    fi = maze.free_index
    tasks = []
    for g in goals:
        ok = free[np.isfinite(dist[:, fi[g]]) & (free != g)]
        s0 = int(rng.choice(ok)) if ok.size else int(g)
        tasks.append((s0, int(g)))
    return tasks


def evaluate(table, maze: GridMaze, tasks, max_steps=None) -> EvalResult:
    """Success rate of greedy rollouts; ``max_steps`` defaults to 4x the BFS distance."""
    if not tasks:
        raise ValueError("empty task list")
    results = []
    policies = {}
    for s0, g in tasks:
        d = bfs_distance(maze, g)[s0]
        if not np.isfinite(d):
            raise ValueError(f"task ({s0}, {g}) is unreachable")
        cap = int(4 * d) if max_steps is None else int(max_steps)
        if g not in policies:
            policies[g] = extract_policy(table, maze, g)
        ro = rollout(maze, policies[g], s0, g, cap)
        results.append({"s0": int(s0), "g": int(g), "bfs": int(d), "max_steps": cap,
                        "success": bool(ro.success), "steps": int(ro.steps)})
    rate = float(np.mean([r["success"] for r in results]))
    return EvalResult(rate, results)


def write_eval_csv(res: EvalResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s0", "g", "bfs", "max_steps", "success", "steps"])
        for t in res.tasks:
            w.writerow([t["s0"], t["g"], t["bfs"], t["max_steps"], int(t["success"]), t["steps"]])
        w.writerow(["success_rate", repr(res.success_rate), "", "", "", ""])


# geometry --------------------------------------------------------------------------

def wall_faces(maze: GridMaze):
    """``(cell, normal)`` for every free cell face shared with a wall.

    Normals are unit vectors pointing from the wall into the cell, with
    x along columns and y along rows.
    """
    walls = maze.walls.ravel()
    cells = maze.free_cells
    out_c, out_n = [], []
    for off, d in ((1, (-1.0, 0.0)), (-1, (1.0, 0.0)), (maze.width, (0.0, -1.0)), (-maze.width, (0.0, 1.0))):
        hit = cells[walls[cells + off]]
        out_c.append(hit)
        out_n.append(np.broadcast_to(d, (hit.size, 2)))
    return np.concatenate(out_c), np.concatenate(out_n)


def alignment_score(table, maze: GridMaze, g: int):
    """Mean ``|cos|`` between ``grad V(., g)`` and the wall normal over wall faces.

    Every free cell face shared with a wall contributes once (the goal cell
    is skipped). Low values mean gradients run along walls, so contours meet
    walls at right angles. ``None`` when every gradient there vanishes.
    """
    cells, normals = wall_faces(maze)
    keep = cells != g
    cells, normals = cells[keep], normals[keep]
    if cells.size == 0:
        return None
    grad = value_gradient(table, maze, cells, g).reshape(-1, 2)
    gn = np.linalg.norm(grad, axis=1)
    nz = gn > 1e-12
    if not np.any(nz):
        return None
    cos = np.abs(np.sum(grad[nz] * normals[nz], axis=1)) / gn[nz]
    return float(cos.mean())


def value_field(table, maze: GridMaze, g: int) -> ScalarField2D:
    """``V(., g)`` on the maze grid (``data[col, row]``); walls hold 0."""
    fi = maze.free_index
    flat = np.zeros(maze.n_cells)
    flat[maze.free_cells] = table[fi[maze.free_cells], fi[g]]
    mask = np.where(maze.walls.ravel(), OBSTACLE, FREE)
    mask[g] = GOAL
    shape = (maze.height, maze.width)
    return ScalarField2D(flat.reshape(shape).T, mask.reshape(shape).T, maze.cell_size, (0.0, 0.0))


def export_geometry(table, maze: GridMaze, g: int, out_prefix=None) -> dict:
    """Value field, gradient quiver and wall-alignment score for goal ``g``.

    With ``out_prefix`` writes ``<prefix>_field.csv``, ``<prefix>_mask.csv``
    and ``<prefix>_quiver.csv`` (cell, x, y, gx, gy).
    """
    maze.check_cells(g, "goal")
    fld = value_field(table, maze, g)
    cells = maze.free_cells
    grad = value_gradient(table, maze, cells, g).reshape(-1, 2)
    pos = maze.pos(cells)
    score = alignment_score(table, maze, g)
    if out_prefix is not None:
        write_field_csv(fld, f"{out_prefix}_field.csv", f"{out_prefix}_mask.csv")
        with open(f"{out_prefix}_quiver.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell", "x", "y", "gx", "gy"])
            for c, p, d in zip(cells, pos, grad):
                w.writerow([int(c), repr(float(p[0])), repr(float(p[1])), repr(float(d[0])), repr(float(d[1]))])
    return {"field": fld, "cells": cells, "gradient": grad, "alignment_score": score}


# ablation ----------------------------------------------------------------------------

def fk_estimator_variance(table, maze: GridMaze, cfg: FKConfig, pairs, n_repeats: int = 200) -> float:
    """Variance of the K-sample mean ``mean_k V(s'_k, g)`` over independent draws.

    Averaged over ``pairs``; ``table`` is held fixed.
    """
    fi = maze.free_index
    out = []
    for p, (s, g) in enumerate(pairs):
        streams = np.uint64(p) * np.uint64(n_repeats) + np.arange(n_repeats, dtype=np.uint64)
        nb = sample_neighbors(maze, np.full(n_repeats, s), cfg, streams=streams)
        means = table[fi[nb], fi[g]].mean(axis=1)
        # identical means (no jump left the cell) would otherwise leave rounding noise
        out.append(0.0 if np.ptp(means) == 0 else means.var(ddof=1))
    return float(np.mean(out))


@dataclass
class AblationConfig:
    nu: float = 0.5  # used by the K rows
    k: int = 10  # used by the nu rows
    k_grid: tuple = K_GRID
    nu_grid: tuple = NU_GRID
    seeds: tuple = (0, 1, 2)
    lam: float = 1.0
    dt: float = 1.0
    q: float = 1.0
    gamma: float = 0.99
    lr: float = 0.2
    batch_size: int = 256
    n_steps: int = 10_000
    n_tasks: int = 50
    task_seed: int = 1234
    n_variance_pairs: int = 20
    n_repeats: int = 200


def _cells(cfg: AblationConfig):
    for k in cfg.k_grid:
        for seed in cfg.seeds:
            yield "K", float(k), int(k), float(cfg.nu), int(seed)
    for nu in cfg.nu_grid:
        for seed in cfg.seeds:
            yield "nu", float(nu), int(cfg.k), float(nu), int(seed)


def _run_cell(args):
    maze, ds, cfg, tasks, var_pairs, ref_table, (param, val, k, nu, seed), run_dir = args
    est = GoalValueEstimator(maze, gamma=cfg.gamma, lr=cfg.lr, batch_size=cfg.batch_size,
                             n_steps=cfg.n_steps, regularizer="fk", lam=cfg.lam, nu=nu, dt=cfg.dt, k=k,
                             q=cfg.q, log_every=max(cfg.n_steps, 1), random_state=seed).fit(ds)
    res = evaluate(est.values_, maze, tasks)
    fk = FKConfig(nu, cfg.dt, k, cfg.q, seed)
    var = fk_estimator_variance(ref_table, maze, fk, var_pairs, cfg.n_repeats)
    goals = sorted({g for _, g in tasks})
    scores = [alignment_score(est.values_, maze, g) for g in goals]
    scores = [s for s in scores if s is not None]
    row = {"sweep_param": param, "value": val, "seed": seed, "success_rate": res.success_rate,
            "mean_steps": res.mean_steps, "fk_variance": var,
            "hinge_slack": float(hinge_slack(cfg.q, cfg.dt, nu)),
            "alignment_score": float(np.mean(scores)) if scores else None}
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        est.save(os.path.join(run_dir, "checkpoint.json"))
        with open(os.path.join(run_dir, "result.json"), "w") as fh:
            json.dump(row, fh, sort_keys=True, indent=1)
            fh.write("\n")
    return row


def ablate(maze: GridMaze, ds: Dataset, cfg: AblationConfig | None = None, parallel: int = 1,
           out_dir=None) -> list:
    """One FK-regularized run per (sweep cell, seed), in sweep order.

    With ``out_dir`` each run writes its checkpoint and result row to its own
    subdirectory ``NN_<param>-<value>_seed<seed>``.

    The estimator variance column uses the closed-form value table as the
    fixed field, so it isolates the sampler from training noise.
    """
    from .value import closed_form_table

    cfg = cfg or AblationConfig()
    if not cfg.seeds or not cfg.k_grid or not cfg.nu_grid:
        raise ValueError("sweep needs seeds and both grids")
    tasks = make_tasks(maze, cfg.n_tasks, cfg.task_seed)
    rng = np.random.default_rng(cfg.task_seed + 1)
    var_pairs = [tuple(int(c) for c in rng.choice(maze.free_cells, 2)) for _ in range(cfg.n_variance_pairs)]
    ref = closed_form_table(maze, cfg.gamma)
    jobs = []
    for n, cell in enumerate(_cells(cfg)):
        run_dir = None if out_dir is None else os.path.join(out_dir, f"{n:02d}_{cell[0]}-{cell[1]:g}_seed{cell[4]}")
        jobs.append((maze, ds, cfg, tasks, var_pairs, ref, cell, run_dir))
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=int(parallel)) as pool:
            rows = list(pool.map(_run_cell, jobs))
    else:
        rows = [_run_cell(j) for j in jobs]
    expected = len(cfg.k_grid) * len(cfg.seeds) + len(cfg.nu_grid) * len(cfg.seeds)
    if len(rows) != expected:
        raise RuntimeError("ablation report is incomplete")
    return rows


def summarize(rows) -> list:
    """Mean and std of success per sweep cell, in first-seen order."""
    keys, groups = [], {}
    for r in rows:
        key = (r["sweep_param"], r["value"])
        if key not in groups:
            keys.append(key)
            groups[key] = []
        groups[key].append(r)
    out = []
    for key in keys:
        g = groups[key]
        succ = np.array([r["success_rate"] for r in g])
        out.append({"sweep_param": key[0], "value": key[1], "n_seeds": len(g),
                    "success_mean": float(succ.mean()), "success_std": float(succ.std(ddof=0)),
                    "fk_variance": float(np.mean([r["fk_variance"] for r in g])),
                    "hinge_slack": g[0]["hinge_slack"]})
    return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])


def read_report_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or tuple(rows[0].keys()) != REPORT_COLUMNS:
        raise ValueError(f"{path}: not an ablation report")
    return rows


__all__ = ["extract_policy", "rollout", "evaluate", "make_tasks", "export_geometry", "alignment_score",
           "ablate", "AblationConfig", "fk_estimator_variance", "write_report_csv", "summarize"]
