"""Fixed-point operators over the block-tridiagonal splitting A = D - L - U:
block Jacobi (parallel over block rows, the multigrid smoother) and
forward/backward/symmetric block Gauss-Seidel (serial in time, the coarse
preconditioner and comparison baselines).
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch
from .kkt import BlockTriKKT, DiagonalSolver
from .krylov import Preconditioner
from . import linalg

__all__ = [
    "jacobi_apply",
    "fgs_apply",
    "bgs_apply",
    "sgs_apply",
    "smoother_preconditioner",
    "SMOOTHER_KINDS",
]

SMOOTHER_KINDS = ("jacobi", "fgs", "bgs", "sgs")


class _LuDiagonalAdapter:
    """Adapter so the per-block LuFactors sequence from factor_diagonal can
    drive the smoothers directly (slow path; tests the literal contract)."""

    def __init__(self, a: BlockTriKKT, factors):
        self.layout = a.layout
        self.n_steps = a.n_steps
        self.factors = factors

    def solve_block(self, i, r):
        return linalg.lu_solve(self.factors[i], r)

    def solve_all(self, r):
        lay = self.layout
        out = np.empty(lay.dim)
        for i in range(self.n_steps + 1):
            s = lay.block_starts[i]
            w = lay.block_size(i)
            out[s:s + w] = linalg.lu_solve(self.factors[i], r[s:s + w])
        return out


def _as_solver(a: BlockTriKKT, dfac):
    if isinstance(dfac, (DiagonalSolver, _LuDiagonalAdapter)):
        return dfac
    return _LuDiagonalAdapter(a, dfac)


def _check_dims(a: BlockTriKKT, b, x):
    if b.shape != (a.dim,) or x.shape != (a.dim,):
        raise DimensionMismatch("vector length does not match the operator")


def jacobi_apply(a: BlockTriKKT, dfac, b, x, sweeps: int = 1,
                 omega: float = 1.0) -> np.ndarray:
    """Block-Jacobi relaxation: x <- x + omega * D^{-1} (b - A x), repeated.

    Each sweep recomputes the full residual and then solves every diagonal
    block independently, so block rows may be processed in any order (or
    concurrently) with bitwise-identical results.
    """
    solver = _as_solver(a, dfac)
    b = np.asarray(b, dtype=np.float64)
    x = np.array(x, dtype=np.float64)
    _check_dims(a, b, x)
    for _ in range(sweeps):
        r = b - a.apply(x)
        x += omega * solver.solve_all(r)
    return x


def _forward_subst(a: BlockTriKKT, solver, r: np.ndarray) -> np.ndarray:
    """Solve (D - L) delta = r by forward block substitution."""
    lay = a.layout
    delta = np.empty(lay.dim)
    nu = lay.n_u
    for i in range(a.n_steps + 1):
        s = lay.block_starts[i]
        w = lay.block_size(i)
        rhs = r[s:s + w].copy()
        if i >= 1:
            row, _ = a._coupling_offsets(i)
            rhs[row:row + nu] -= delta[lay.rows("u")[i - 1]]
        delta[s:s + w] = solver.solve_block(i, rhs)
    return delta


def _backward_subst(a: BlockTriKKT, solver, r: np.ndarray) -> np.ndarray:
    """Solve (D - U) delta = r by backward block substitution."""
    lay = a.layout
    delta = np.empty(lay.dim)
    nu = lay.n_u
    for i in range(a.n_steps, -1, -1):
        s = lay.block_starts[i]
        w = lay.block_size(i)
        rhs = r[s:s + w].copy()
        if i <= a.n_steps - 1:
            # u_{i+1} rows of block i couple to mu_{i+1} in block i+1
            row = 0 if i == 0 else nu
            rhs[row:row + nu] -= delta[lay.rows("mu")[i]]
        delta[s:s + w] = solver.solve_block(i, rhs)
    return delta


def fgs_apply(a: BlockTriKKT, dfac, b, x) -> np.ndarray:
    """Forward block Gauss-Seidel update: x <- x + (D - L)^{-1} (b - A x)."""
    solver = _as_solver(a, dfac)
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_dims(a, b, x)
    return x + _forward_subst(a, solver, b - a.apply(x))


def bgs_apply(a: BlockTriKKT, dfac, b, x) -> np.ndarray:
    """Backward block Gauss-Seidel update: x <- x + (D - U)^{-1} (b - A x)."""
    solver = _as_solver(a, dfac)
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_dims(a, b, x)
    return x + _backward_subst(a, solver, b - a.apply(x))


def sgs_apply(a: BlockTriKKT, dfac, b, x) -> np.ndarray:
    """Symmetric block Gauss-Seidel update.

    Applies P_sgs^{-1} = (D - U)^{-1} D (D - L)^{-1} to the residual,
    where P_sgs = (D - L) D^{-1} (D - U).
    """
    solver = _as_solver(a, dfac)
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_dims(a, b, x)
    r = b - a.apply(x)
    w = _forward_subst(a, solver, r)
    # y = D w without the off-diagonal couplings
    lay = a.layout
    y = np.empty(lay.dim)
    f = lay.first_size
    y[:f] = a.diag_first @ w[:f]
    if a.n_steps > 1:
        m = lay.interior_size
        wi = w[f:f + (a.n_steps - 1) * m].reshape(a.n_steps - 1, m, 1)
        y[f:f + (a.n_steps - 1) * m] = np.matmul(a.diag_interior, wi).reshape(-1)
    y[-lay.last_size:] = a.diag_last @ w[-lay.last_size:]
    return x + _backward_subst(a, solver, y)


def smoother_preconditioner(a: BlockTriKKT, dfac, kind: str,
                            sweeps: int = 1, omega: float = 1.0) -> Preconditioner:
    """One fixed-point application (from a zero initial guess) packaged as a
    right preconditioner; a fixed linear map, hence not flexible."""
    if kind not in SMOOTHER_KINDS:
        raise ValueError(f"unknown smoother kind {kind!r}")
    solver = _as_solver(a, dfac)
    zero = np.zeros(a.dim)
    if kind == "jacobi":
        return Preconditioner(
            apply=lambda r: jacobi_apply(a, solver, r, zero.copy(), sweeps, omega),
            is_flexible=False)
    fn = {"fgs": fgs_apply, "bgs": bgs_apply, "sgs": sgs_apply}[kind]
    return Preconditioner(apply=lambda r: fn(a, solver, r, zero), is_flexible=False)
