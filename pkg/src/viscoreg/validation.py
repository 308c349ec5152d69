"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

import numpy as np

from .data import Dataset, from_arrays
from .maze import GridMaze


def _int_array(X, name):
    arr = np.asarray(X)
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise ValueError(f"{name} must hold integer cell indices")
        arr = arr.astype(np.int64)
    elif arr.dtype.kind not in "iu":
        raise ValueError(f"{name} must hold integer cell indices")
    return arr.astype(np.int64)


def check_dataset(X, maze: GridMaze) -> Dataset:
    """A :class:`Dataset`, or an ``(n, 4)`` array of ``(s, a, s_next, g)``."""
    if isinstance(X, Dataset):
        ds = X
    else:
        arr = _int_array(X, "X")
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ValueError(f"expected an (n, 4) array of (s, a, s_next, g), got shape {arr.shape}")
        ds = from_arrays(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    return ds.validate(maze)


def check_pairs(X, maze: GridMaze) -> np.ndarray:
    """``(n, 2)`` array of free ``(s, g)`` cells."""
    arr = _int_array(X, "X")
    if arr.ndim == 1 and arr.size == 2:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array of (s, g) pairs, got shape {arr.shape}")
    maze.check_cells(arr, "cell")
    return arr
