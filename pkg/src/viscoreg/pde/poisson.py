"""Screened Poisson solve for the desirability and the log transform to values."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import FREE, GOAL, ObstacleScene, ScalarField2D, rasterize


class SolverError(RuntimeError):
    pass


def absorbing_floor(scene: ObstacleScene, q, nu: float) -> float:
    """Wall desirability ``exp(-V_max / 2 nu)``, ``V_max = 10 * diam * sqrt(2 q_max)``.

    Clamped to the smallest normal double so the log transform stays finite.
    """
    v_max = 10.0 * scene.diameter * np.sqrt(2.0 * float(np.max(q)))
    return float(max(np.exp(-v_max / (2.0 * nu)), np.finfo(float).tiny))


def _node_array(q, shape):
    q = np.asarray(q, dtype=float)
    return np.broadcast_to(q, shape) if q.ndim == 0 else q


def screened_poisson_system(grid: ScalarField2D, q, nu: float, bc: str, psi_wall: float):
    """Assemble ``A psi = b`` over free nodes, equations scaled by ``h**2``.

    Faces toward goal cells carry Dirichlet 1 and faces toward walls carry
    ``psi_wall`` (absorbing) or zero flux (reflecting), all through mirrored
    ghost values so the boundaries sit exactly on the faces.
    """
    nx, ny = grid.shape
    free = grid.mask == FREE
    index = -np.ones((nx, ny), dtype=np.int64)
    n = int(free.sum())
    index[free] = np.arange(n)
    kappa = _node_array(q, grid.shape) / (2.0 * nu ** 2)
    diag = (kappa * grid.h ** 2)[free].astype(float)
    b = np.zeros(n)
    rows, cols = [], []
    ii, jj = np.nonzero(free)
    p = index[ii, jj]
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ni, nj = ii + di, jj + dj
        inside = (ni >= 0) & (ni < nx) & (nj >= 0) & (nj < ny)
        nb_mask = np.full(p.shape, -1, dtype=np.int64)
        nb_mask[inside] = grid.mask[ni[inside], nj[inside]]
        is_free = nb_mask == FREE
        is_goal = nb_mask == GOAL
        is_wall = ~(is_free | is_goal)
        diag[is_free] += 1.0
        rows.append(p[is_free])
        cols.append(index[ni[is_free], nj[is_free]])
        diag[is_goal] += 2.0
        b[p[is_goal]] += 2.0
        if bc == "absorbing":
            diag[is_wall] += 2.0
            # np.add.at: a node can touch several wall faces
            np.add.at(b, p[is_wall], 2.0 * psi_wall)
        elif bc != "reflecting":
            raise ValueError(f"unknown boundary condition {bc!r}")
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    off = sp.csr_matrix((-np.ones(r.size), (r, c)), shape=(n, n))
    A = (sp.diags(diag) + off).tocsr()
    return A, b, index


def solve_screened_poisson(scene: ObstacleScene, q, nu: float, h: float, bc: str | None = None,
                           tol: float = 1e-10, max_refine: int = 10) -> ScalarField2D:
    """Desirability solving ``q psi / (2 nu^2) - lap psi = 0`` with ``psi = 1`` on the goal.

    Sparse LU followed by iterative refinement until the scaled residual is
    below ``tol`` in the max norm. Wall nodes report the wall value.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    if np.any(np.asarray(q) <= 0):
        raise ValueError("running cost q must be positive")
    bc = bc or scene.bc
    grid = rasterize(scene, h)
    if not np.any(grid.mask == GOAL):
        raise ValueError("scene has no goal nodes at this resolution")
    psi_wall = absorbing_floor(scene, q, nu)
    A, b, index = screened_poisson_system(grid, q, nu, bc, psi_wall)
    data = np.full(grid.shape, psi_wall)
    data[grid.mask == GOAL] = 1.0
    if b.size:
        lu = spla.splu(A.tocsc())
        x = lu.solve(b)
        for _ in range(max_refine):
            res = b - A @ x
            if np.max(np.abs(res)) <= tol:
                break
            x += lu.solve(res)
        else:
            raise SolverError(f"residual {np.max(np.abs(b - A @ x)):.3e} above {tol:.1e}")
        data[grid.mask == FREE] = x[index[grid.mask == FREE]]
    out = grid.with_data(data)
    out.residual = float(np.max(np.abs(b - A @ x))) if b.size else 0.0
    return out


def cole_hopf(psi: ScalarField2D | np.ndarray, nu: float):
    """``V = -2 nu log psi``."""
    data = psi.data if isinstance(psi, ScalarField2D) else np.asarray(psi, dtype=float)
    if np.any(~(data > 0)):
        raise ValueError("desirability must be strictly positive")
    v = -2.0 * nu * np.log(data)
    return psi.with_data(v) if isinstance(psi, ScalarField2D) else v


def inverse_cole_hopf(v: ScalarField2D | np.ndarray, nu: float):
    """``psi = exp(-V / 2 nu)``."""
    data = v.data if isinstance(v, ScalarField2D) else np.asarray(v, dtype=float)
    psi = np.exp(-data / (2.0 * nu))
    return v.with_data(psi) if isinstance(v, ScalarField2D) else psi


def strip_desirability(x, q: float, nu: float, length: float):
    """Exact 1D desirability with ``psi(0) = 1`` and zero flux at ``x = length``."""
    k = np.sqrt(q / (2.0 * nu * nu))
    x = np.asarray(x, dtype=float)
    # cosh ratio written with exponentials that cannot overflow for large k L
    return np.exp(-k * x) * (1.0 + np.exp(-2.0 * k * (length - x))) / (1.0 + np.exp(-2.0 * k * length))
