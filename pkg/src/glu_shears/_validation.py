"""Input validation helpers shared across the package."""

from __future__ import annotations

import os

import numpy as np

THREADS_ENV = "GLU_SHEARS_THREADS"


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def as_f32_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D C-order float32 array with at least one row and column."""
    m = np.asarray(a, dtype=np.float32)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={m.ndim}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must be at least 1x1, got shape {m.shape}")
    return np.ascontiguousarray(m)


def check_index_list(indices, limit: int, what: str = "index") -> np.ndarray:
    """Validate a strictly ascending list of indices in [0, limit)."""
    idx = np.asarray(list(indices), dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError(f"{what} list must be one-dimensional")
    if idx.size:
        if int(idx.min()) < 0 or int(idx.max()) >= limit:
            raise IndexError(
                f"{what} out of range: values must lie in [0, {limit}), got "
                f"min={int(idx.min())} max={int(idx.max())}"
            )
        if not np.all(idx[1:] > idx[:-1]):
            raise ValueError(f"{what} list must be strictly ascending")
    return idx


def thread_count() -> int:
    """Internal parallelism cap: GLU_SHEARS_THREADS, else hardware concurrency."""
    raw = os.environ.get(THREADS_ENV, "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n >= 1:
        return n
    return os.cpu_count() or 1
