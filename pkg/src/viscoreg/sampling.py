"""Boundary-clipped Gaussian jumps shared by the regularizer and the PDE checks."""
from __future__ import annotations

import numpy as np

MARGIN = 1e-3


def clipped_jumps(pos, eps, nu: float, boundary_distance, margin: float = MARGIN):
    """Endpoints ``pos + min(nu |eps|, d(pos, u) - margin) u`` with ``u = eps / |eps|``.

    ``pos`` has shape ``(n, 2)`` and ``eps`` ``(n, k, 2)``. ``boundary_distance``
    takes flat arrays ``(x, y, ux, uy)`` and returns the distance to the first
    wall along each ray; it is only queried for jumps that could reach one.
    An optional ``reach`` attribute on the callable (scalar or ``(n,)``) is a
    lower bound on the wall distance of each origin; shorter jumps skip the
    ray cast.
    """
    pos = np.asarray(pos, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if nu <= 0:
        raise ValueError("nu must be positive")
    r = np.linalg.norm(eps, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(r[..., None] > 0, eps / r[..., None], 0.0)
    step = nu * r
    reach = getattr(boundary_distance, "reach", None)
    if reach is None:
        check = np.ones(step.shape, dtype=bool)
    else:
        check = step >= np.broadcast_to(np.asarray(reach, dtype=float), pos.shape[:1])[:, None] - margin
    check &= r > 0
    if np.any(check):
        ii, kk = np.nonzero(check)
        d = boundary_distance(pos[ii, 0], pos[ii, 1], u[ii, kk, 0], u[ii, kk, 1])
        step[ii, kk] = np.minimum(step[ii, kk], np.maximum(d - margin, 0.0))
    return pos[:, None, :] + step[..., None] * u
