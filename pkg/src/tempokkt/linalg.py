"""Dense vector/matrix kernels and pivoted LU factorization.

Matrices are 2-D ``numpy.float64`` arrays in row-major (C) storage order;
vectors are 1-D arrays.  This is the only module that touches raw numeric
storage: everything above it goes through the kernels defined here or
through numpy operations on arrays produced here.

All kernels are deterministic: identical inputs give bitwise-identical
outputs (LAPACK is driven single-threaded-deterministically per input).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, SingularMatrix

__all__ = [
    "DenseMatrix",
    "LuFactors",
    "lu_factor",
    "lu_solve",
    "matvec",
    "dot",
    "norm2",
    "axpy",
    "as_matrix",
    "as_vector",
]

# Row-major dense matrix; kept as a named alias so call sites document intent.
DenseMatrix = np.ndarray

#: Relative pivot floor: pivots below ``PIVOT_FLOOR * max|a|`` signal singularity.
PIVOT_FLOOR = 1e-14


def as_matrix(a) -> DenseMatrix:
    """Coerce to a C-contiguous float64 2-D array without copying when possible."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


def as_vector(x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch(f"expected a 1-D vector, got ndim={x.ndim}")
    return x


@dataclass
class LuFactors:
    """Combined L/U storage with partial-pivoting permutation.

    ``lu`` holds the strictly-lower factor L (unit diagonal implied) and
    the upper factor U in one matrix, ``piv`` the LAPACK-style pivot
    sequence, ``sign`` the permutation sign, and ``min_pivot`` the
    smallest pivot magnitude met during elimination.
    """

    lu: DenseMatrix
    piv: np.ndarray
    sign: int
    min_pivot: float

    @property
    def n(self) -> int:
        return self.lu.shape[0]


def lu_factor(a: DenseMatrix, pivot_floor: float = PIVOT_FLOOR) -> LuFactors:
    """Factor PA = LU with partial pivoting.

    Raises :class:`SingularMatrix` if a pivot magnitude falls below
    ``pivot_floor * max|a|`` (absolute floor ``pivot_floor`` for an
    all-zero matrix).
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise DimensionMismatch(f"lu_factor needs a square matrix, got {n}x{m}")
    if not np.isfinite(a).all():
        raise SingularMatrix("matrix contains non-finite entries")
    lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    pivots = np.abs(np.diag(lu))
    min_pivot = float(pivots.min()) if n > 0 else 0.0
    scale = float(np.abs(a).max()) if n > 0 else 0.0
    floor = pivot_floor * max(scale, 1e-300)
    if n > 0 and min_pivot < floor:
        raise SingularMatrix(
            f"pivot {min_pivot:.3e} below floor {floor:.3e}", min_pivot=min_pivot
        )
    sign = 1 if np.count_nonzero(piv != np.arange(n)) % 2 == 0 else -1
    return LuFactors(lu=lu, piv=piv, sign=sign, min_pivot=min_pivot)


def lu_solve(f: LuFactors, b: np.ndarray) -> np.ndarray:
    """Solve Ax = b using precomputed factors (PAx = Pb)."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != f.n:
        raise DimensionMismatch(f"rhs length {b.shape[0]} != factor size {f.n}")
    return scipy.linalg.lu_solve((f.lu, f.piv), b, check_finite=False)


def matvec(a: DenseMatrix, x: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    x = np.asarray(x)
    if a.ndim != 2 or a.shape[1] != x.shape[0]:
        raise DimensionMismatch(f"matvec shapes {a.shape} and {x.shape}")
    return a @ x


def dot(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise DimensionMismatch(f"dot shapes {x.shape} and {y.shape}")
    return float(np.dot(x, y))


def norm2(x: np.ndarray) -> float:
    """Euclidean norm; the norm behind every residual test in the toolkit."""
    return float(np.linalg.norm(np.asarray(x)))


def axpy(alpha: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise DimensionMismatch(f"axpy shapes {x.shape} and {y.shape}")
    return alpha * x + y
