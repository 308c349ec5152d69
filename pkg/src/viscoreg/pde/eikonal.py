"""Arrival times for ``|grad T| = 1 / S`` by fast marching, plus a graph oracle."""
from __future__ import annotations

import heapq

import numba
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .fields import FREE, GOAL, ObstacleScene, ScalarField2D, rasterize

_FAR, _TRIAL, _KNOWN = 0, 1, 2


@numba.njit(cache=True)
def _upwind(a, b, f):
    # a, b: smallest known neighbours along each axis; f = h / S
    if a > b:
        a, b = b, a
    if b - a >= f:
        return a + f
    return 0.5 * (a + b + np.sqrt(2.0 * f * f - (a - b) ** 2))


@numba.njit(cache=True)
def _march(T, state, passable, slowness_h, seeds_i, seeds_j):
    nx, ny = T.shape
    heap = [(0.0, 0, 0)]
    heap.pop()
    for k in range(seeds_i.size):
        heapq.heappush(heap, (T[seeds_i[k], seeds_j[k]], seeds_i[k], seeds_j[k]))
    order = np.empty(nx * ny, dtype=np.float64)
    n_acc = 0
    while len(heap) > 0:
        t, i, j = heapq.heappop(heap)
        if state[i, j] == _KNOWN or t > T[i, j]:
            continue
        state[i, j] = _KNOWN
        order[n_acc] = t
        n_acc += 1
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if a < 0 or a >= nx or b < 0 or b >= ny:
                continue
            if not passable[a, b] or state[a, b] == _KNOWN:
                continue
            tx = np.inf
            if a > 0 and state[a - 1, b] == _KNOWN:
                tx = T[a - 1, b]
            if a < nx - 1 and state[a + 1, b] == _KNOWN:
                tx = min(tx, T[a + 1, b])
            ty = np.inf
            if b > 0 and state[a, b - 1] == _KNOWN:
                ty = T[a, b - 1]
            if b < ny - 1 and state[a, b + 1] == _KNOWN:
                ty = min(ty, T[a, b + 1])
            cand = _upwind(tx, ty, slowness_h[a, b])
            if cand < T[a, b]:
                T[a, b] = cand
                state[a, b] = _TRIAL
                heapq.heappush(heap, (cand, a, b))
    return order[:n_acc]


def _goal_adjacent(mask):
    """Free cells among the eight neighbours of a goal cell."""
    goal = np.pad(mask == GOAL, 1)
    adj = np.zeros(mask.shape, dtype=bool)
    nx, ny = mask.shape
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            adj |= goal[1 + di:1 + di + nx, 1 + dj:1 + dj + ny]
    return adj & (mask == FREE)


def solve_eikonal_fmm(scene: ObstacleScene, speed, h: float) -> ScalarField2D:
    """First-order fast marching with ``T = 0`` on the goal.

    Free cells touching the goal (diagonals included) start from their exact distance to the goal
    box, which keeps the boundary on the goal faces (and makes a straight
    strip exact). Unreachable free cells stay at ``inf`` and are listed in
    ``result.unreachable``; ``result.accept_order`` holds accepted times.
    """
    if scene.goal is None:
        raise ValueError("scene has no goal")
    grid = rasterize(scene, h)
    mask = grid.mask
    if not np.any(mask == GOAL):
        raise ValueError("scene has no goal nodes at this resolution")
    S = np.broadcast_to(np.asarray(speed, dtype=float), mask.shape)
    if np.any(S[mask == FREE] <= 0):
        raise ValueError("speed must be positive")
    T = np.full(mask.shape, np.inf)
    T[mask == GOAL] = 0.0
    state = np.zeros(mask.shape, dtype=np.int8)
    state[mask == GOAL] = _KNOWN
    X, Y = grid.coords()
    gx0, gx1, gy0, gy1 = scene.goal
    adj = _goal_adjacent(mask)
    ddx = np.maximum(np.maximum(gx0 - X, 0.0), X - gx1)
    ddy = np.maximum(np.maximum(gy0 - Y, 0.0), Y - gy1)
    T[adj] = (np.hypot(ddx, ddy) / S)[adj]
    state[adj] = _TRIAL
    si, sj = np.nonzero(adj)
    order = _march(T, state, mask == FREE, np.ascontiguousarray(h / S), si.astype(np.int64),
                   sj.astype(np.int64))
    out = grid.with_data(T)
    out.unreachable = np.argwhere((mask == FREE) & ~np.isfinite(T))
    out.accept_order = order
    return out


def _swept(di, dj):
    """Cells a straight move crosses besides its endpoints."""
    si, sj = int(np.sign(di)), int(np.sign(dj))
    if abs(di) == 1 and abs(dj) == 1:
        return [(di, 0), (0, dj)]
    if abs(di) == 2:
        return [(si, 0), (si, dj)]
    if abs(dj) == 2:
        return [(0, sj), (di, sj)]
    return []


def graph_distance(scene: ObstacleScene, h: float, connectivity: int = 8) -> ScalarField2D:
    """Shortest path lengths to the goal over the cell graph (Dijkstra).

    Independent of the marching code and used as its oracle. ``connectivity``
    is 4, 8 or 16 (knight moves added); moves may not cut blocked cells. A
    virtual source links to goal-adjacent cells with their exact distance to
    the goal box, so the boundary sits on the goal faces as in the marcher.
    """
    moves = {4: [(1, 0), (0, 1)], 8: [(1, 0), (0, 1), (1, 1), (1, -1)]}
    moves[16] = moves[8] + [(1, 2), (2, 1), (2, -1), (1, -2)]
    if connectivity not in moves:
        raise ValueError("connectivity must be 4, 8 or 16")
    grid = rasterize(scene, h)
    mask = grid.mask
    nx, ny = mask.shape
    ok = mask == FREE
    idx = np.arange(nx * ny).reshape(nx, ny)
    rows, cols, w = [], [], []
    for di, dj in moves[connectivity]:
        i0, i1 = max(0, -di), min(nx, nx - di)
        j0, j1 = max(0, -dj), min(ny, ny - dj)

        def view(ci, cj):
            return ok[i0 + ci:i1 + ci, j0 + cj:j1 + cj]

        good = view(0, 0) & view(di, dj)
        for ci, cj in _swept(di, dj):
            good &= view(ci, cj)
        rows.append(idx[i0:i1, j0:j1][good])
        cols.append(idx[i0 + di:i1 + di, j0 + dj:j1 + dj][good])
        w.append(np.full(int(good.sum()), h * np.hypot(di, dj)))
    adj = _goal_adjacent(mask)
    X, Y = grid.coords()
    gx0, gx1, gy0, gy1 = scene.goal
    d0 = np.hypot(np.maximum(np.maximum(gx0 - X, 0.0), X - gx1),
                  np.maximum(np.maximum(gy0 - Y, 0.0), Y - gy1))
    src = nx * ny
    rows.append(np.full(int(adj.sum()), src))
    cols.append(idx[adj])
    w.append(d0[adj])
    r, c, wt = np.concatenate(rows), np.concatenate(cols), np.concatenate(w)
    G = sp.csr_matrix((wt, (r, c)), shape=(src + 1, src + 1))
    dist = dijkstra(G, directed=False, indices=src)[:src].reshape(nx, ny)
    dist[mask == GOAL] = 0.0
    return grid.with_data(dist)
