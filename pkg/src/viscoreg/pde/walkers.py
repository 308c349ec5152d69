"""Discrete-time Feynman-Kac walkers for the desirability."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .._rng import bits, gaussian_pair, mix64, stream_key, uniform
from .fields import ObstacleScene
from .poisson import absorbing_floor


@dataclass
class WalkerConfig:
    n_walkers: int = 100_000
    max_steps: int = 20_000
    seed: int = 0
    bridge: bool = True
    # weight below which walkers play Russian roulette (0 disables)
    roulette: float = 1e-2
    # substeps per step near the goal and near obstacle corners
    refine: int = 4
    # size of the refined zone, in coarse step lengths
    refine_radius: float = 4.0

    def __post_init__(self):
        if self.n_walkers < 1:
            raise ValueError("n_walkers must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not 0.0 <= self.roulette < 1.0:
            raise ValueError("roulette must lie in [0, 1)")
        if self.refine < 1:
            raise ValueError("refine must be >= 1")


@dataclass
class WalkerEstimate:
    value: float
    stderr: float
    n_walkers: int
    n_censored: int
    reliable: bool


@numba.njit(cache=True)
def _goal_gap(x, y, g):
    ddx = max(g[0] - x, 0.0, x - g[1])
    ddy = max(g[2] - y, 0.0, y - g[3])
    return np.sqrt(ddx * ddx + ddy * ddy)


@numba.njit(cache=True)
def _reflect(px, py, x, y, ext, obs):
    # arena faces mirror independently (exact for a box); repeat for multiple hits
    for _ in range(16):
        moved = False
        if x < ext[0]:
            x = 2.0 * ext[0] - x
            moved = True
        elif x > ext[1]:
            x = 2.0 * ext[1] - x
            moved = True
        if y < ext[2]:
            y = 2.0 * ext[2] - y
            moved = True
        elif y > ext[3]:
            y = 2.0 * ext[3] - y
            moved = True
        for k in range(obs.shape[0]):
            ox0, ox1, oy0, oy1 = obs[k, 0], obs[k, 1], obs[k, 2], obs[k, 3]
            if ox0 < x < ox1 and oy0 < y < oy1:
                # mirror across the face whose slab holds the start point; from
                # a corner quadrant the step is rejected. Both rules are
                # symmetric in start and end, so uniform stays stationary.
                if oy0 < py < oy1:
                    x = 2.0 * (ox0 if px <= ox0 else ox1) - x
                elif ox0 < px < ox1:
                    y = 2.0 * (oy0 if py <= oy0 else oy1) - y
                else:
                    return px, py
                moved = True
        if not moved:
            break
    return x, y


@numba.njit(cache=True)
def _in_wall(x, y, ext, obs):
    if not (ext[0] < x < ext[1] and ext[2] < y < ext[3]):
        return True
    for k in range(obs.shape[0]):
        if obs[k, 0] < x < obs[k, 1] and obs[k, 2] < y < obs[k, 3]:
            return True
    return False


@numba.njit(cache=True)
def _near_corner(x, y, obs, r):
    # square neighbourhoods of side 2r around every obstacle corner
    for k in range(obs.shape[0]):
        if min(abs(x - obs[k, 0]), abs(x - obs[k, 1])) < r and \
                min(abs(y - obs[k, 2]), abs(y - obs[k, 3])) < r:
            return True
    return False


@numba.njit(cache=True)
def _walk(seed, x0, y0, n_walkers, max_steps, dt, c, ext, obs, goal,
          reflect, bridge, psi_wall, w_min, refine, radius):
    payoff = np.empty(n_walkers)
    sig_c = np.sqrt(2.0 * dt)
    sig_f = np.sqrt(2.0 * dt / refine)
    near = radius * sig_c
    disc_c, disc_f = np.exp(-c * dt), np.exp(-c * dt / refine)
    censored = 0
    for w in range(n_walkers):
        key = stream_key(seed, np.uint64(2 * w))
        key_aux = stream_key(seed, np.uint64(2 * w + 1))
        x, y = x0, y0
        weight = 1.0
        value = -1.0
        d_old = _goal_gap(x, y, goal)
        if d_old == 0.0:
            value = 1.0
        else:
            elapsed = 0.0
            n = 0
            while elapsed < max_steps:
                # finer steps where discretisation error lives: near the goal
                # and near obstacle corners
                fine = d_old < near or _near_corner(x, y, obs, near)
                h_t = dt / refine if fine else dt
                sigma = sig_f if fine else sig_c
                elapsed += 1.0 / refine if fine else 1.0
                zx, zy = gaussian_pair(bits(key, np.uint64(n)))
                counter = np.uint64(n)
                n += 1
                nx = x + sigma * zx
                ny = y + sigma * zy
                disc = disc_f if fine else disc_c
                # hits inside a step are charged at its midpoint
                w_hit = weight * np.sqrt(disc)
                if reflect:
                    nx, ny = _reflect(x, y, nx, ny, ext, obs)
                elif _in_wall(nx, ny, ext, obs):
                    value = w_hit * psi_wall
                    break
                weight *= disc
                d_new = _goal_gap(nx, ny, goal)
                if d_new == 0.0:
                    value = w_hit
                    break
                if bridge and d_old * d_new < 40.0 * h_t:
                    # Brownian-bridge crossing of the (locally flat) goal
                    # boundary; per-axis step variance is 2 h_t
                    if uniform(bits(key_aux, counter)) < np.exp(-d_old * d_new / h_t):
                        value = w_hit
                        break
                x, y, d_old = nx, ny, d_new
                if weight < w_min:
                    # unbiased: survive with probability weight / w_min
                    if uniform(mix64(bits(key_aux, counter))) * w_min < weight:
                        weight = w_min
                    else:
                        value = 0.0
                        break
            if value < 0.0:
                censored += 1
                value = weight * psi_wall
        payoff[w] = value
    return payoff, censored


def fk_walker_estimate(scene: ObstacleScene, start, q: float, nu: float, dt: float,
                       cfg: WalkerConfig | None = None) -> WalkerEstimate:
    """Monte Carlo desirability at ``start``.

    Each walker takes Gaussian steps with per-axis std ``sqrt(2 dt)``, its
    weight is multiplied by ``exp(-q dt / (2 nu^2))`` per step and it pays its
    weight on entering the goal, discounted to the middle of the hitting step.
    With ``cfg.bridge`` a step whose endpoints both lie outside the goal still
    counts as a hit with the Brownian-bridge crossing probability. Walls
    reflect when ``scene.bc`` is ``"reflecting"`` and absorb (paying the wall
    floor) otherwise. Walkers
    still running after ``cfg.max_steps`` pay the wall floor. Light walkers
    are thinned by Russian roulette, which keeps the estimator unbiased.
    """
    cfg = cfg or WalkerConfig()
    if scene.goal is None:
        raise ValueError("scene has no goal")
    x0, y0 = float(start[0]), float(start[1])
    if not bool(scene.is_free(x0, y0)) and not bool(scene.in_goal(x0, y0)):
        raise ValueError(f"start {start} is not in free space")
    if np.ndim(q) != 0 or q <= 0:
        raise ValueError("walkers take a positive scalar running cost")
    psi_wall = absorbing_floor(scene, q, nu)
    obs = np.asarray(scene.obstacles, dtype=float).reshape(-1, 4)
    payoff, censored = _walk(
        np.uint64(cfg.seed), x0, y0, int(cfg.n_walkers), float(cfg.max_steps),
        float(dt), float(q / (2.0 * nu ** 2)),
        np.asarray(scene.extent, dtype=float), obs, np.asarray(scene.goal, dtype=float),
        scene.bc == "reflecting", bool(cfg.bridge), psi_wall, float(cfg.roulette),
        float(cfg.refine), float(cfg.refine_radius),
    )
    mean = float(payoff.mean())
    stderr = float(payoff.std(ddof=1) / np.sqrt(payoff.size)) if payoff.size > 1 else 0.0
    return WalkerEstimate(mean, stderr, payoff.size, int(censored), censored < payoff.size)
