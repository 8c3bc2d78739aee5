"""Dense 2D float64 matrix operations.

Matrices are plain ``numpy.ndarray`` values: two-dimensional, C-ordered,
float64, with at least one row and one column and every entry finite. The
helpers here validate those invariants and provide the handful of reductions
the rest of the package builds on. All functions are pure; callers may share
arrays freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ELEMENTWISE_OPS = ("mul", "sub", "add")


@dataclass(frozen=True)
class MatrixStats:
    """Summary statistics of a matrix, as used by the threshold rules."""

    mean: float
    std: float
    median: float
    mad: float


def as_matrix(data) -> np.ndarray:
    """Coerce ``data`` to a validated 2D float64 array (copying if needed)."""
    a = np.array(data, dtype=np.float64, order="C")
    if a.ndim == 1:
        a = a.reshape(1, -1)
    check_matrix(a)
    return a


def check_matrix(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate the matrix invariants; returns ``a`` unchanged."""
    if not isinstance(a, np.ndarray) or a.ndim != 2:
        raise ValueError(f"{name} must be a 2D array, got {getattr(a, 'shape', type(a))}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and column, got shape {a.shape}")
    if a.dtype != np.float64:
        raise ValueError(f"{name} must be float64, got {a.dtype}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product ``a @ b`` with an explicit dimension check."""
    check_matrix(a, "a")
    check_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul dimension mismatch: a is {a.shape[0]}x{a.shape[1]}, "
            f"b is {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def elementwise(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    """Elementwise ``mul``, ``sub`` or ``add`` of two same-shaped matrices."""
    check_matrix(a, "a")
    check_matrix(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"elementwise shape mismatch: {a.shape} vs {b.shape}")
    if op == "mul":
        return a * b
    if op == "sub":
        return a - b
    if op == "add":
        return a + b
    raise ValueError(f"unknown elementwise op {op!r}, expected one of {_ELEMENTWISE_OPS}")


def abs_map(a: np.ndarray) -> np.ndarray:
    """Elementwise absolute value; output is non-negative everywhere."""
    check_matrix(a)
    return np.abs(a)


def lower_median(a: np.ndarray) -> float:
    """Median with the lower of the two middle elements for even counts.

    Deterministic and oracle-checkable, unlike the interpolating convention.
    """
    flat = np.ravel(a)
    if flat.size == 0:
        raise ValueError("median of an empty matrix is undefined")
    k = (flat.size - 1) // 2
    return float(np.partition(flat, k)[k])


def stats(a: np.ndarray) -> MatrixStats:
    """Mean, population std (divisor N), lower-median and unscaled MAD.

    MAD is median(|x - median(x)|) with no consistency factor.
    """
    check_matrix(a)
    med = lower_median(a)
    mad = lower_median(np.abs(a - med))
    return MatrixStats(
        mean=float(a.mean()),
        std=float(a.std()),
        median=med,
        mad=mad,
    )


def frobenius_sq(a: np.ndarray) -> float:
    """Sum of squared elements (squared Frobenius norm)."""
    check_matrix(a)
    return float(np.sum(a * a))
