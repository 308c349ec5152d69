"""Physics penalties on goal-conditioned value tables.

The Feynman-Kac hinge asks ``V(s, g)`` not to exceed the mean target value
at K clipped random neighbours by more than the slack ``q dt / nu``; the
Eikonal baseline asks ``|grad V| = 1 / S``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._rng import gaussian_2d
from .maze import BoundaryDistance, GridMaze, gradient_stencil
from .sampling import MARGIN, clipped_jumps


@dataclass
class FKConfig:
    nu: float = 0.01
    dt: float = 1.0
    k: int = 10
    q: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("k must be a positive integer")
        self.k = int(self.k)
        if np.any(np.asarray(self.q) <= 0):
            raise ValueError("running cost q must be positive")

    @property
    def slack(self):
        return hinge_slack(self.q, self.dt, self.nu)


@dataclass
class EikConfig:
    speed: float = 1.0

    def __post_init__(self):
        if np.any(np.asarray(self.speed) <= 0):
            raise ValueError("speed must be positive")


def hinge_slack(q, dt: float, nu: float):
    return np.asarray(q, dtype=float) * dt / nu


def fk_penalty(v_s, v_samples_target, cfg: FKConfig, q_s=None):
    """``max(0, v_s - mean(samples) - q dt / nu)^2``; samples on the last axis."""
    q_s = cfg.q if q_s is None else q_s
    samples = np.asarray(v_samples_target, dtype=float)
    if samples.shape[-1] == 0:
        raise ValueError("need at least one neighbour sample")
    excess = np.asarray(v_s, dtype=float) - samples.mean(axis=-1) - hinge_slack(q_s, cfg.dt, cfg.nu)
    return np.maximum(excess, 0.0) ** 2


def fk_penalty_grad(v_s, v_samples_target, cfg: FKConfig, q_s=None):
    """Derivative of :func:`fk_penalty` in ``v_s`` (samples are constants)."""
    q_s = cfg.q if q_s is None else q_s
    excess = (np.asarray(v_s, dtype=float) - np.asarray(v_samples_target, dtype=float).mean(axis=-1)
              - hinge_slack(q_s, cfg.dt, cfg.nu))
    return 2.0 * np.maximum(excess, 0.0)


def sample_neighbors(maze: GridMaze, s, cfg: FKConfig, streams=None, seed=None):
    """K clipped Gaussian neighbours of each cell in ``s``, as cell indices ``(n, K)``.

    Draw ``k`` of sample ``i`` depends only on ``(seed, streams[i], k)``.
    Displacements are ``nu |eps|`` along ``eps / |eps|``, cut to the wall
    distance minus a margin, and the endpoint is snapped to its cell.
    """
    s = np.atleast_1d(np.asarray(s, dtype=np.int64))
    maze.check_cells(s, "state")
    streams = np.arange(s.size) if streams is None else np.asarray(streams)
    seed = cfg.seed if seed is None else seed
    eps = gaussian_2d(seed, streams, cfg.k)
    pos = maze.pos(s)
    # origins are cell centres, half a cell from any wall face
    bd = BoundaryDistance(maze, reach=0.5 * maze.cell_size)
    pts = clipped_jumps(pos, eps, cfg.nu, bd, MARGIN)
    return maze.cell_at(pts[..., 0], pts[..., 1])


def fk_batch_loss(values, target, maze: GridMaze, s, g, cfg: FKConfig, streams=None, seed=None,
                  q_s=None):
    """Mean hinge penalty over a batch and its gradient per sample.

    ``values``/``target`` are ``(n_free, n_free)`` tables indexed by free
    index. Returns ``(loss, grad)`` where ``grad[i]`` is the derivative of
    sample ``i``'s own penalty with respect to ``V(s_i, g_i)``; target
    entries carry no gradient.
    """
    s = np.asarray(s, dtype=np.int64)
    g = np.asarray(g, dtype=np.int64)
    nb = sample_neighbors(maze, s, cfg, streams, seed)
    fi = maze.free_index
    gi = fi[g]
    v_s = values[fi[s], gi]
    v_nb = target[fi[nb], gi[:, None]]
    pen = fk_penalty(v_s, v_nb, cfg, q_s)
    return float(pen.mean()), fk_penalty_grad(v_s, v_nb, cfg, q_s)


def eikonal_penalty(grad_v, speed_s=1.0):
    """``(|grad V| - 1 / S)^2`` with the vector on the last axis."""
    if np.any(np.asarray(speed_s) <= 0):
        raise ValueError("speed must be positive")
    return (np.linalg.norm(np.asarray(grad_v, dtype=float), axis=-1) - 1.0 / np.asarray(speed_s)) ** 2


def eik_batch_loss(values, maze: GridMaze, s, g, cfg: EikConfig):
    """Mean Eikonal penalty and its gradient on the stencil entries.

    Returns ``(loss, cells, grads)``: ``cells`` is ``(n, 4)`` (x+, x-, y+, y-
    neighbours) and ``grads`` the derivative of each sample's penalty with
    respect to ``V(cell, g)``. The penalty is not differentiable at a zero
    gradient; the zero subgradient is used there.
    """
    s = np.asarray(s, dtype=np.int64)
    g = np.asarray(g, dtype=np.int64)
    plus, minus, spacing = _stencil(maze)
    fi = maze.free_index
    gi = fi[g]
    cells = np.stack([plus[s, 0], minus[s, 0], plus[s, 1], minus[s, 1]], axis=1)
    v = values[fi[cells], gi[:, None]]
    sp = spacing[s]
    with np.errstate(invalid="ignore", divide="ignore"):
        gx = np.where(sp[:, 0] > 0, (v[:, 0] - v[:, 1]) / sp[:, 0], 0.0)
        gy = np.where(sp[:, 1] > 0, (v[:, 2] - v[:, 3]) / sp[:, 1], 0.0)
    norm = np.hypot(gx, gy)
    target_norm = 1.0 / np.asarray(cfg.speed, dtype=float)
    pen = (norm - target_norm) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(norm > 0, 2.0 * (norm - target_norm) / norm, 0.0)
        dx = np.where(sp[:, 0] > 0, scale * gx / sp[:, 0], 0.0)
        dy = np.where(sp[:, 1] > 0, scale * gy / sp[:, 1], 0.0)
    grads = np.stack([dx, -dx, dy, -dy], axis=1)
    return float(pen.mean()), cells, grads


def _stencil(maze: GridMaze):
    cached = getattr(maze, "_grad_stencil", None)
    if cached is None:
        cached = maze._grad_stencil = gradient_stencil(maze)
    return cached
