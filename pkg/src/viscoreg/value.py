"""Tabular goal-conditioned values trained by expectile TD with optional physics penalties."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .data import Dataset
from .maze import GridMaze, gradient_stencil
from .regularizers import EikConfig, FKConfig, eik_batch_loss, fk_batch_loss
from .validation import check_dataset, check_pairs

REGULARIZERS = ("none", "fk", "eikonal")


class TrainingError(RuntimeError):
    pass


# table helpers -------------------------------------------------------------------

def new_table(maze: GridMaze) -> np.ndarray:
    """Zero table ``[free_index(s), free_index(g)]``."""
    return np.zeros((maze.n_free, maze.n_free))


def value(table, maze: GridMaze, s, g):
    maze.check_cells(s, "state")
    maze.check_cells(g, "goal")
    return table[maze.free_index[np.asarray(s)], maze.free_index[np.asarray(g)]]


def set_value(table, maze: GridMaze, s, g, v) -> None:
    maze.check_cells(s, "state")
    maze.check_cells(g, "goal")
    table[maze.free_index[np.asarray(s)], maze.free_index[np.asarray(g)]] = v


def closed_form_table(maze: GridMaze, gamma: float) -> np.ndarray:
    """``-(1 - gamma^d) / (1 - gamma)`` from BFS hop counts ``d``."""
    d = maze.distances()
    with np.errstate(over="ignore"):
        return -(1.0 - gamma ** d) / (1.0 - gamma)


def value_gradient(table, maze: GridMaze, s, g) -> np.ndarray:
    """Finite-difference ``(dV/dx, dV/dy)`` of ``V(., g)`` at cell ``s``.

    Central over free neighbours, one-sided at walls; an axis with no free
    neighbour contributes zero. Raises for a cell with no free neighbour on
    either axis.
    """
    s = np.atleast_1d(maze.check_cells(s, "state"))
    g = np.broadcast_to(np.asarray(g), s.shape)
    plus, minus, spacing = gradient_stencil(maze)
    if np.any((spacing[s] == 0).all(axis=1)):
        raise ValueError("isolated cell: no free neighbour on any axis")
    fi = maze.free_index
    gi = fi[g]
    out = np.zeros(s.shape + (2,))
    for axis in (0, 1):
        sp = spacing[s, axis]
        diff = table[fi[plus[s, axis]], gi] - table[fi[minus[s, axis]], gi]
        out[..., axis] = np.where(sp > 0, diff / np.where(sp > 0, sp, 1.0), 0.0)
    return out[0] if out.shape[0] == 1 else out


def expectile_loss(u, kappa: float):
    """``|kappa - 1[u < 0]| u^2``."""
    if not 0 < kappa < 1:
        raise ValueError("kappa must lie in (0, 1)")
    u = np.asarray(u, dtype=float)
    return np.abs(kappa - (u < 0)) * u ** 2


def td_target(r, gamma: float, terminal, v_next_target):
    return np.where(terminal, r, r + gamma * np.asarray(v_next_target))


# training ------------------------------------------------------------------------

@dataclass
class TrainConfig:
    gamma: float = 0.99
    kappa: float = 0.9
    lr: float = 0.2
    batch: int = 256
    steps: int = 20_000
    lam_phy: float = 0.0
    lam_eik: float = 0.0
    target_rate: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.5 < self.kappa < 1:
            raise ValueError("kappa must lie in (0.5, 1)")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch < 1 or self.steps < 0:
            raise ValueError("batch must be >= 1 and steps >= 0")
        if self.lam_phy < 0 or self.lam_eik < 0:
            raise ValueError("regularizer weights must be nonnegative")
        if self.lam_phy > 0 and self.lam_eik > 0:
            raise ValueError("only one of lam_phy and lam_eik may be nonzero")
        if not 0 < self.target_rate <= 1:
            raise ValueError("target_rate must lie in (0, 1]")

    @property
    def v_min(self) -> float:
        return -1.0 / (1.0 - self.gamma)


def train_step(table, target, maze: GridMaze, batch, cfg: TrainConfig, fk: FKConfig | None = None,
               eik: EikConfig | None = None, step_index: int = 0) -> dict:
    """One in-place update of ``table`` and ``target``; returns mean losses.

    ``batch`` is ``(s, s_next, g)`` cell arrays. The gradient of each sample's
    expectile TD loss (plus weighted penalty) is applied to the entries it
    touches, summed over the batch. The table is then clamped to
    ``[-1 / (1 - gamma), 0]`` and the target moves toward it at
    ``cfg.target_rate``.
    """
    s, s_next, g = (np.asarray(b, dtype=np.int64) for b in batch)
    if s.size == 0:
        raise ValueError("empty batch")
    fi = maze.free_index
    si, ni, gi = fi[s], fi[s_next], fi[g]
    terminal = s == g
    r = np.where(terminal, 0.0, -1.0)
    y = td_target(r, cfg.gamma, terminal, target[ni, gi])
    u = y - table[si, gi]
    w = np.abs(cfg.kappa - (u < 0))
    td_loss = float(np.mean(w * u ** 2))
    grad = np.zeros_like(table)
    np.add.at(grad, (si, gi), -2.0 * w * u)
    phy_loss = eik_loss = 0.0
    if cfg.lam_phy > 0:
        if fk is None:
            raise ValueError("lam_phy > 0 needs an FKConfig")
        streams = np.uint64(step_index) * np.uint64(s.size) + np.arange(s.size, dtype=np.uint64)
        phy_loss, g_phy = fk_batch_loss(table, target, maze, s, g, fk, streams=streams)
        np.add.at(grad, (si, gi), cfg.lam_phy * g_phy)
    if cfg.lam_eik > 0:
        if eik is None:
            raise ValueError("lam_eik > 0 needs an EikConfig")
        eik_loss, cells, g_eik = eik_batch_loss(table, maze, s, g, eik)
        np.add.at(grad, (fi[cells], np.broadcast_to(gi[:, None], cells.shape)), cfg.lam_eik * g_eik)
    if not (np.isfinite(td_loss) and np.isfinite(phy_loss) and np.isfinite(eik_loss)):
        raise TrainingError(f"non-finite loss at step {step_index}: td={td_loss} phy={phy_loss} eik={eik_loss}")
    table -= cfg.lr * grad
    np.clip(table, cfg.v_min, 0.0, out=table)
    target *= 1.0 - cfg.target_rate
    target += cfg.target_rate * table
    return {"td_loss": td_loss, "phy_loss": float(phy_loss), "eik_loss": float(eik_loss)}


def bellman_residual(table, maze: GridMaze, ds: Dataset, gamma: float) -> float:
    """Mean absolute one-step TD error of ``table`` against itself on ``ds``."""
    fi = maze.free_index
    term = ds.terminal
    y = td_target(np.where(term, 0.0, -1.0), gamma, term, table[fi[ds.s_next], fi[ds.g]])
    return float(np.mean(np.abs(y - table[fi[ds.s], fi[ds.g]])))


class GoalValueEstimator(RegressorMixin, BaseEstimator):
    """Goal-conditioned value table for one maze.

    ``fit`` takes a :class:`~viscoreg.data.Dataset` or an integer array with
    columns ``(s, a, s_next, g)``; ``predict`` takes ``(s, g)`` pairs and
    returns ``V(s, g)``. ``regularizer`` is ``"none"``, ``"fk"`` or
    ``"eikonal"`` with weight ``lam``.
    """

    def __init__(self, maze=None, gamma=0.99, kappa=0.9, lr=0.2, batch_size=256, n_steps=20_000,
                 regularizer="none", lam=1.0, nu=0.01, dt=1.0, k=10, q=1.0, speed=1.0,
                 target_rate=0.005, log_every=100, random_state=0):
        self.maze = maze
        self.gamma = gamma
        self.kappa = kappa
        self.lr = lr
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.regularizer = regularizer
        self.lam = lam
        self.nu = nu
        self.dt = dt
        self.k = k
        self.q = q
        self.speed = speed
        self.target_rate = target_rate
        self.log_every = log_every
        self.random_state = random_state

    def _configs(self):
        if self.maze is None:
            raise ValueError("estimator needs a maze")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}")
        cfg = TrainConfig(self.gamma, self.kappa, self.lr, int(self.batch_size), int(self.n_steps),
                          self.lam if self.regularizer == "fk" else 0.0,
                          self.lam if self.regularizer == "eikonal" else 0.0,
                          self.target_rate, int(self.random_state))
        fk = FKConfig(self.nu, self.dt, self.k, self.q, int(self.random_state)) if self.regularizer == "fk" else None
        eik = EikConfig(self.speed) if self.regularizer == "eikonal" else None
        return cfg, fk, eik

    def fit(self, X, y=None, callback=None):
        """Train from scratch. ``callback(step, estimator)`` runs after each logged step."""
        cfg, fk, eik = self._configs()
        ds = check_dataset(X, self.maze)
        rng = np.random.default_rng(cfg.seed)
        self.values_ = new_table(self.maze)
        self.target_ = new_table(self.maze)
        self.loss_history_ = []
        acc = np.zeros(3)
        n_acc = 0
        for t in range(cfg.steps):
            idx = rng.integers(0, len(ds), cfg.batch)
            rep = train_step(self.values_, self.target_, self.maze, (ds.s[idx], ds.s_next[idx], ds.g[idx]),
                             cfg, fk, eik, step_index=t)
            acc += (rep["td_loss"], rep["phy_loss"], rep["eik_loss"])
            n_acc += 1
            if (t + 1) % self.log_every == 0 or t + 1 == cfg.steps:
                td, phy, ek = acc / n_acc
                self.loss_history_.append((t + 1, td, phy, ek))
                acc[:] = 0
                n_acc = 0
                self.n_steps_done_ = t + 1
                if callback is not None:
                    callback(t + 1, self)
        self.n_steps_done_ = cfg.steps
        return self

    def predict(self, X):
        pairs = check_pairs(X, self.maze)
        if not hasattr(self, "values_"):
            raise ValueError("estimator is not fitted")
        fi = self.maze.free_index
        return self.values_[fi[pairs[:, 0]], fi[pairs[:, 1]]]

    def save(self, path) -> None:
        save_checkpoint(path, self.values_, self.maze, {"step": int(getattr(self, "n_steps_done_", 0)),
                                                        "params": _jsonable(self.get_params(deep=False))})

    def write_losses(self, path) -> None:
        write_loss_csv(path, self.loss_history_)


def _jsonable(params):
    out = {}
    for k, v in params.items():
        if k == "maze":
            continue
        out[k] = v.item() if hasattr(v, "item") else v
    return out


# files ---------------------------------------------------------------------------

def save_checkpoint(path, table, maze: GridMaze, meta: dict | None = None) -> None:
    """JSON with a ``(width, height, n_goals)`` header and row-major values ``[s][g]``."""
    doc = {"format": "viscoreg.value_table/1", "width": maze.width, "height": maze.height,
           "n_goals": maze.n_free, "n_states": maze.n_free,
           "free_cells": [int(c) for c in maze.free_cells], "meta": meta or {},
           "values": [repr(float(v)) for v in np.asarray(table).ravel()]}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path, maze: GridMaze | None = None):
    """Returns ``(table, doc)``; checks the header against ``maze`` when given."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    n = int(doc["n_goals"])
    table = np.array([float(v) for v in doc["values"]]).reshape(int(doc["n_states"]), n)
    if maze is not None:
        if (doc["width"], doc["height"], n) != (maze.width, maze.height, maze.n_free) or \
                list(doc["free_cells"]) != [int(c) for c in maze.free_cells]:
            raise ValueError("checkpoint does not match the maze")
    return table, doc


def write_loss_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "td_loss", "phy_loss", "eik_loss"])
        for step, td, phy, ek in rows:
            w.writerow([int(step), repr(float(td)), repr(float(phy)), repr(float(ek))])


def config_dict(cfg) -> dict:
    return asdict(cfg)
