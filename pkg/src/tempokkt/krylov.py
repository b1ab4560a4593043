"""Iterative linear solvers: restarted GMRES, flexible GMRES, and a
trust-region truncated projected CG.

All solvers are parameterized over abstract operator/preconditioner
application contracts and apply preconditioning on the right, so the
residual norms they report are true residuals of the original system.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import Breakdown, DimensionMismatch, NonFiniteValue

__all__ = [
    "LinearOperator",
    "Preconditioner",
    "SolveReport",
    "CgResult",
    "gmres",
    "fgmres",
    "projected_cg",
]

#: Relative happy-breakdown tolerance for the Arnoldi process.
BREAKDOWN_TOL = 1e-14


@dataclass
class LinearOperator:
    """A square linear map given by its dimension and application function."""

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x)


@dataclass
class Preconditioner:
    """Right preconditioner application.

    ``is_flexible`` is True when the application is not a fixed linear map,
    e.g. when it contains an inner iterative solve; such preconditioners are
    only admissible inside :func:`fgmres`.
    """

    apply: Callable[[np.ndarray], np.ndarray]
    is_flexible: bool = False

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self.apply(r)


@dataclass
class SolveReport:
    """Iteration statistics of one Krylov solve."""

    iterations: int
    residual_history: list = field(default_factory=list)
    converged: bool = False
    final_relative_residual: float = float("nan")


def _as_prec(prec):
    if prec is None:
        return None
    if isinstance(prec, Preconditioner):
        return prec
    return Preconditioner(apply=prec)


def _gmres_engine(op, prec, b, x0, rel_tol, max_iters, restart, flexible):
    """Right-preconditioned (F)GMRES with restarts.

    GMRES recombines the solution through a single final preconditioner
    application per cycle; FGMRES stores the preconditioned basis so the
    preconditioner may change between applications.
    """
    if not (0.0 < rel_tol < 1.0):
        raise ValueError(f"rel_tol must lie in (0,1), got {rel_tol}")
    n = op.dim
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (n,):
        raise DimensionMismatch(f"rhs shape {b.shape} != operator dim {n}")
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != (n,):
        raise DimensionMismatch(f"x0 shape {x.shape} != operator dim {n}")
    prec = _as_prec(prec)
    if restart is None:
        restart = max_iters
    if restart < 1:
        raise ValueError("restart must be >= 1")

    r = b - op(x)
    if not np.isfinite(r).all():
        raise NonFiniteValue("non-finite initial residual")
    beta0 = float(np.linalg.norm(r))
    history = [beta0]
    if beta0 == 0.0:
        return x, SolveReport(0, history, True, 0.0)
    target = rel_tol * beta0

    total_iters = 0
    while True:
        beta = float(np.linalg.norm(r))
        if beta <= target:
            break
        m = min(restart, max_iters - total_iters)
        if m <= 0:
            break
        V = np.empty((m + 1, n))
        Z = np.empty((m, n)) if (flexible and prec is not None) else None
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j_done = 0
        broke_down = False
        for j in range(m):
            zj = V[j] if prec is None else prec(V[j])
            if Z is not None:
                Z[j] = zj
            w = op(zj)
            # modified Gram-Schmidt
            for i in range(j + 1):
                hij = float(np.dot(V[i], w))
                H[i, j] = hij
                w -= hij * V[i]
            hj1 = float(np.linalg.norm(w))
            H[j + 1, j] = hj1
            if not np.isfinite(hj1) or not np.isfinite(H[: j + 1, j]).all():
                raise NonFiniteValue("non-finite Hessenberg entry in Arnoldi")
            # apply stored Givens rotations to the new column
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = float(np.hypot(H[j, j], H[j + 1, j]))
            if denom == 0.0:
                raise Breakdown("zero diagonal in Givens elimination")
            cs[j] = H[j, j] / denom
            sn[j] = H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total_iters += 1
            j_done = j + 1
            est = abs(g[j + 1])
            history.append(est)
            if hj1 <= BREAKDOWN_TOL * beta0:
                broke_down = True
                break
            if est <= target or total_iters >= max_iters:
                break
            V[j + 1] = w / hj1

        if j_done > 0:
            y = np.zeros(j_done)
            for i in range(j_done - 1, -1, -1):
                y[i] = (g[i] - H[i, i + 1 : j_done] @ y[i + 1 : j_done]) / H[i, i]
            if Z is not None:
                x = x + Z[:j_done].T @ y
            else:
                vy = V[:j_done].T @ y
                x = x + (vy if prec is None else prec(vy))
        r = b - op(x)
        true_norm = float(np.linalg.norm(r))
        if broke_down and true_norm > max(target, 10 * BREAKDOWN_TOL * beta0):
            raise Breakdown("zero Arnoldi norm with nonzero residual")
        if true_norm <= target or total_iters >= max_iters or broke_down:
            break
        # restart: continue from the recomputed residual

    if not np.isfinite(x).all():
        raise NonFiniteValue("non-finite solution vector")
    final_rel = float(np.linalg.norm(b - op(x))) / beta0
    report = SolveReport(
        iterations=total_iters,
        residual_history=history,
        converged=final_rel <= rel_tol,
        final_relative_residual=final_rel,
    )
    return x, report


def gmres(op, prec, b, x0=None, rel_tol=1e-10, max_iters=401, restart=None):
    """Restarted GMRES with optional fixed right preconditioner.

    Returns ``(x, SolveReport)``; ``converged`` is False when the iteration
    cap is reached first.  A flexible preconditioner passed here is used
    as-is, reproducing the stagnation such a combination produces.
    """
    return _gmres_engine(op, prec, b, x0, rel_tol, max_iters, restart, flexible=False)


def fgmres(op, prec, b, x0=None, rel_tol=1e-10, max_iters=401, restart=None):
    """Flexible GMRES: tolerates a preconditioner that varies per application.

    With a fixed linear preconditioner the iterates match right-preconditioned
    :func:`gmres` to rounding.
    """
    return _gmres_engine(op, prec, b, x0, rel_tol, max_iters, restart, flexible=True)


@dataclass
class CgResult:
    step: np.ndarray
    status: str  # converged | boundary | negative_curvature | max_iters
    iterations: int


def _to_boundary(t, d, radius):
    """Positive sigma with ||t + sigma d|| = radius."""
    dd = float(np.dot(d, d))
    td = float(np.dot(t, d))
    tt = float(np.dot(t, t))
    disc = max(td * td - dd * (tt - radius * radius), 0.0)
    return (-td + np.sqrt(disc)) / dd


def projected_cg(hess_op, project, grad, trust_radius, rel_tol=1e-2, max_iters=200):
    """Steihaug-Toint truncated CG on a projected subspace.

    ``project`` maps a residual onto the feasible subspace (approximately
    idempotent; typically the primal part of an augmented-system solve) and
    is re-applied every iteration so inexact projections cannot accumulate
    nullspace drift.  ``grad`` must already be projected.  The step is kept
    inside the ball ``||step|| <= trust_radius``; on boundary/negative
    curvature exits the step is the boundary intersection along the last
    direction.
    """
    if trust_radius <= 0.0:
        raise ValueError("trust_radius must be positive")
    n = grad.shape[0]
    t = np.zeros(n)
    r = np.array(grad, dtype=np.float64)
    p = project(r)
    gamma = float(np.dot(r, p))
    if not np.isfinite(gamma):
        raise NonFiniteValue("non-finite projected gradient")
    tol2 = max(rel_tol * rel_tol * gamma, 0.0)
    if gamma <= tol2 or gamma <= 0.0:
        return CgResult(step=t, status="converged", iterations=0)
    d = -p
    for k in range(max_iters):
        hd = hess_op(d)
        kappa = float(np.dot(d, hd))
        if not np.isfinite(kappa):
            raise NonFiniteValue("non-finite curvature in projected CG")
        if kappa <= 0.0:
            sigma = _to_boundary(t, d, trust_radius)
            return CgResult(step=t + sigma * d, status="negative_curvature",
                            iterations=k + 1)
        alpha = gamma / kappa
        t_next = t + alpha * d
        if float(np.linalg.norm(t_next)) >= trust_radius:
            sigma = _to_boundary(t, d, trust_radius)
            return CgResult(step=t + sigma * d, status="boundary",
                            iterations=k + 1)
        t = t_next
        r = r + alpha * hd
        p = project(r)
        gamma_next = float(np.dot(r, p))
        if gamma_next <= tol2:
            return CgResult(step=t, status="converged", iterations=k + 1)
        d = -p + (gamma_next / gamma) * d
        gamma = gamma_next
    return CgResult(step=t, status="max_iters", iterations=max_iters)
