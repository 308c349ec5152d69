"""Nodewise HJB diagnostics on grid fields."""
from __future__ import annotations

import numpy as np

from .._rng import gaussian_2d
from ..sampling import clipped_jumps
from .fields import FREE, GOAL, ObstacleScene, ScalarField2D


def interior(fld: ScalarField2D, walls: str = "exclude"):
    """Free nodes where centred stencils apply.

    With ``walls="exclude"`` all four neighbours must be free. With
    ``"mirror"`` wall neighbours count as zero-flux ghosts (the reflecting
    discretisation) and only goal neighbours disqualify a node.
    """
    if walls not in ("exclude", "mirror"):
        raise ValueError(f"unknown wall treatment {walls!r}")
    free = fld.mask == FREE
    ok = free if walls == "exclude" else fld.mask != GOAL
    f = np.pad(ok, 1, constant_values=walls == "mirror")
    return free & f[2:, 1:-1] & f[:-2, 1:-1] & f[1:-1, 2:] & f[1:-1, :-2]


def _stencils(fld: ScalarField2D, walls: str):
    c = fld.data
    d = np.pad(c, 1, mode="edge")
    ok = np.pad(fld.valid, 1)
    nb = []
    for sl in ((slice(2, None), slice(1, -1)), (slice(None, -2), slice(1, -1)),
               (slice(1, -1), slice(2, None)), (slice(1, -1), slice(None, -2))):
        v = d[sl]
        if walls == "mirror":
            v = np.where(ok[sl], v, c)
        nb.append(v)
    xp, xm, yp, ym = nb
    gx = (xp - xm) / (2 * fld.h)
    gy = (yp - ym) / (2 * fld.h)
    lap = (xp + xm + yp + ym - 4 * c) / fld.h ** 2
    return gx, gy, lap


def hjb_residual(v: ScalarField2D, q, nu: float, walls: str = "exclude") -> ScalarField2D:
    """``q - |grad V|^2 / 2 + nu lap V`` on interior nodes, NaN elsewhere."""
    sel = interior(v, walls)
    gx, gy, lap = _stencils(v, walls)
    with np.errstate(invalid="ignore", over="ignore"):
        res = np.asarray(q, dtype=float) - 0.5 * (gx ** 2 + gy ** 2) + nu * lap
    return v.with_data(np.where(sel, res, np.nan))


def linearized_residual(psi: ScalarField2D, q, nu: float, walls: str = "exclude") -> ScalarField2D:
    """``q - 2 nu^2 lap(psi) / psi`` on interior nodes, NaN elsewhere."""
    if np.any(psi.data[psi.valid] <= 0):
        raise ValueError("desirability must be strictly positive")
    sel = interior(psi, walls)
    _, _, lap = _stencils(psi, walls)
    with np.errstate(invalid="ignore", divide="ignore"):
        res = np.asarray(q, dtype=float) - 2.0 * nu ** 2 * lap / psi.data
    return psi.with_data(np.where(sel, res, np.nan))


def field_gradient(fld: ScalarField2D):
    """Per-axis gradient, centred where both neighbours are valid, one-sided otherwise.

    Returns ``(gx, gy)`` arrays with NaN on invalid nodes and along axes with
    no valid neighbour.
    """
    ok = np.pad(fld.valid, 1)
    d = np.pad(fld.data, 1)
    out = []
    for axis in (0, 1):
        sl = [slice(1, -1), slice(1, -1)]
        plus, minus = list(sl), list(sl)
        plus[axis] = slice(2, None)
        minus[axis] = slice(None, -2)
        p_ok, m_ok = ok[tuple(plus)], ok[tuple(minus)]
        c = fld.data
        p, m = d[tuple(plus)], d[tuple(minus)]
        g = np.full(c.shape, np.nan)
        both = p_ok & m_ok
        g[both] = ((p - m) / (2 * fld.h))[both]
        only_p = p_ok & ~m_ok
        g[only_p] = ((p - c) / fld.h)[only_p]
        only_m = m_ok & ~p_ok
        g[only_m] = ((c - m) / fld.h)[only_m]
        g[~fld.valid] = np.nan
        out.append(g)
    return out[0], out[1]


def scene_neighbors(scene: ObstacleScene, fld: ScalarField2D, nu: float, k: int, seed: int = 0):
    """Clipped-jump samples from every free node, snapped to grid cells.

    Same law as the training-time sampler: direction from a 2D Gaussian,
    length ``nu |eps|`` capped at the wall distance minus the margin. Returns
    flat node indices of shape ``(nx, ny, k)`` (``-1`` on non-free nodes).
    """
    X, Y = fld.coords()
    free = fld.mask == FREE
    pos = np.stack([X[free], Y[free]], axis=-1)
    streams = np.flatnonzero(free.ravel())
    eps = gaussian_2d(seed, streams, k)
    pts = clipped_jumps(pos, eps, nu, scene.boundary_distance)
    i, j = fld.node_at(pts[..., 0], pts[..., 1])
    out = np.full(fld.shape + (k,), -1, dtype=np.int64)
    out[free] = i * fld.ny + j
    return out


def jensen_gap(v: ScalarField2D, samples, q, dt: float, nu: float) -> ScalarField2D:
    """``mean V(s') + q dt / nu - V(s)`` per node; the bound says it is >= 0.

    ``samples`` holds flat node indices ``(nx, ny, k)`` as returned by
    :func:`scene_neighbors`; nodes whose samples are ``-1`` get NaN.
    """
    samples = np.asarray(samples)
    has = samples[..., 0] >= 0
    flat = v.data.ravel()
    mean_next = np.where(has, flat[np.where(samples >= 0, samples, 0)].mean(axis=-1), np.nan)
    slack = np.asarray(q, dtype=float) * dt / nu
    return v.with_data(np.where(has, mean_next + slack - v.data, np.nan))
