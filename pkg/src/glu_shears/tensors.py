"""Dense float32 kernels with a pinned accumulation order.

Every reduction in this module accumulates in ascending index order, in
32-bit floats. That makes results bit-reproducible across runs and batch
shapes, and it means a term that is exactly zero can be dropped from a sum
without changing any partial sum — the property the pruning surgery tests
rely on. BLAS-backed matmul is deliberately avoided: its blocked summation
order would break both guarantees.
"""

from __future__ import annotations

import numpy as np

from ._validation import ShapeError, as_f32_matrix, check_index_list

__all__ = [
    "ShapeError",
    "matmul",
    "silu",
    "hadamard",
    "gather_rows",
    "gather_cols",
    "ordered_sum",
]


def matmul(a, b) -> np.ndarray:
    """Matrix product with float32 accumulation in ascending inner-index order."""
    a = as_f32_matrix(a, "a")
    b = as_f32_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions disagree: {a.shape[0]}x{a.shape[1]} "
            f"times {b.shape[0]}x{b.shape[1]}"
        )
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float32)
    for k in range(a.shape[1]):
        # rank-1 update: out[i, j] += a[i, k] * b[k, j], one k at a time
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def silu(x):
    """SiLU activation x * sigmoid(x), elementwise; saturates without error.

    Scalars are evaluated in double precision and returned as float; arrays
    keep float32.
    """
    if np.ndim(x) == 0:
        v = np.float64(x)
        with np.errstate(over="ignore"):
            return float(v / (1.0 + np.exp(-v)))
    m = as_f32_matrix(x, "x")
    with np.errstate(over="ignore"):
        return m / (1.0 + np.exp(-m))


def hadamard(a, b) -> np.ndarray:
    """Elementwise product of two identically shaped matrices."""
    a = as_f32_matrix(a, "a")
    b = as_f32_matrix(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shapes differ: {a.shape} vs {b.shape}")
    return a * b


def gather_rows(m, keep) -> np.ndarray:
    """Copy of the rows listed in `keep` (strictly ascending), order preserved."""
    m = as_f32_matrix(m, "m")
    idx = check_index_list(keep, m.shape[0], "row index")
    if idx.size == 0:
        raise ValueError("gather_rows: keep list must select at least one row")
    return m[idx, :]


def gather_cols(m, keep) -> np.ndarray:
    """Copy of the columns listed in `keep` (strictly ascending), order preserved."""
    m = as_f32_matrix(m, "m")
    idx = check_index_list(keep, m.shape[1], "column index")
    if idx.size == 0:
        raise ValueError("gather_cols: keep list must select at least one column")
    return np.ascontiguousarray(m[:, idx])


def ordered_sum(a: np.ndarray, axis: int) -> np.ndarray:
    """Reduce one axis by accumulating slices in ascending index order.

    Unlike np.sum (pairwise), the accumulation order here is independent of
    the other dimensions, so per-lane results do not change when lanes are
    batched together.
    """
    arr = np.asarray(a)
    moved = np.moveaxis(arr, axis, 0)
    acc = moved[0].copy()
    for k in range(1, moved.shape[0]):
        acc += moved[k]
    return acc
