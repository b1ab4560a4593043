"""Time grids, theta-method residuals/Jacobians, nonlinear forward
stepping, and tracking-objective evaluation.

The theta-method advances ``M u_{i+1} = M v_i + dt*theta*F(u_{i+1}, z_{i+1})
+ dt*(1-theta)*F(v_i, z_{i+1})`` on a uniform grid; ``theta=1`` is backward
Euler, ``theta=0.5`` Crank-Nicolson.  Controls are piecewise constant per
interval; states and controls are indexed 1..N (node/interval i lives at
``i*dt``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, NewtonDivergence, NonFiniteValue
from . import linalg

__all__ = [
    "TimeGrid",
    "ProblemSpec",
    "Trajectory",
    "theta_residual",
    "stage_blocks",
    "forward_solve",
    "objective_and_gradient",
    "stage_weights",
]

NEWTON_MAX_ITERS = 25


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, t_final] into n_steps intervals."""

    t_final: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.t_final <= 0.0:
            raise ValueError("t_final must be positive")

    @property
    def dt(self) -> float:
        return self.t_final / self.n_steps

    def node(self, i: int) -> float:
        return i * self.dt

    def coarsened(self) -> "TimeGrid":
        if self.n_steps % 2 != 0:
            raise ValueError("cannot coarsen an odd step count")
        return TimeGrid(self.t_final, self.n_steps // 2)


@dataclass
class ProblemSpec:
    """Semi-discrete dynamics contract: ``M du/dt = F(u, z)``, ``u(0) = u0``.

    ``f_jac_u``/``f_jac_z`` are the partial Jacobians of ``f_eval``;
    ``f_hess_vec(u, z, lam, du)`` contracts the second derivative of
    ``lam . F`` with a state direction (None means F is at most linear in
    u, or a Gauss-Newton model is acceptable).  ``u_target``/``z_target``
    hold the tracking data at nodes/intervals 1..N for the grid the spec
    was built on.  ``w_state``/``w_control`` are the spatial weight
    matrices of the tracking functional (identity for ODEs, FE mass for
    PDEs); ``w_terminal`` optionally adds a final-time tracking weight.
    """

    n_u: int
    n_z: int
    mass: np.ndarray
    f_eval: Callable[[np.ndarray, np.ndarray], np.ndarray]
    f_jac_u: Callable[[np.ndarray, np.ndarray], np.ndarray]
    f_jac_z: Callable[[np.ndarray, np.ndarray], np.ndarray]
    u0: np.ndarray
    theta: float
    dt: float
    u_target: np.ndarray  # (N, n_u)
    z_target: np.ndarray  # (N, n_z)
    w_state: np.ndarray
    w_control: np.ndarray
    w_terminal: Optional[np.ndarray] = None
    f_hess_vec: Optional[Callable] = None
    name: str = "problem"

    @property
    def n_steps(self) -> int:
        return self.u_target.shape[0]


@dataclass
class Trajectory:
    """Discrete states u_1..u_N and controls z_1..z_N as stacked rows."""

    states: np.ndarray  # (N, n_u)
    controls: np.ndarray  # (N, n_z)


def _check_stage_dims(p: ProblemSpec, v_i, u_next, z_next):
    if v_i.shape != (p.n_u,) or u_next.shape != (p.n_u,):
        raise DimensionMismatch("state vector has wrong dimension")
    if z_next.shape != (p.n_z,):
        raise DimensionMismatch("control vector has wrong dimension")


def theta_residual(p: ProblemSpec, v_i, u_next, z_next, dt: float) -> np.ndarray:
    """Dynamics residual of one theta-method stage.

    Returns ``-M u_next + M v_i + dt*theta*F(u_next, z_next)
    + dt*(1-theta)*F(v_i, z_next)``.
    """
    v_i = np.asarray(v_i, dtype=np.float64)
    u_next = np.asarray(u_next, dtype=np.float64)
    z_next = np.asarray(z_next, dtype=np.float64)
    _check_stage_dims(p, v_i, u_next, z_next)
    th = p.theta
    r = p.mass @ (v_i - u_next)
    if th != 0.0:
        r = r + dt * th * p.f_eval(u_next, z_next)
    if th != 1.0:
        r = r + dt * (1.0 - th) * p.f_eval(v_i, z_next)
    if not np.isfinite(r).all():
        raise NonFiniteValue("non-finite stage residual")
    return r


def stage_blocks(p: ProblemSpec, v_i, u_next, z_next, dt: float):
    """Stage Jacobians (K, C, B) of :func:`theta_residual`.

    K = -M + dt*theta*F_u(u_next, z_next) is the Jacobian w.r.t. u_next,
    C = M + dt*(1-theta)*F_u(v_i, z_next) w.r.t. v_i, and
    B = dt*theta*F_z(u_next, z_next) + dt*(1-theta)*F_z(v_i, z_next)
    w.r.t. z_next.
    """
    v_i = np.asarray(v_i, dtype=np.float64)
    u_next = np.asarray(u_next, dtype=np.float64)
    z_next = np.asarray(z_next, dtype=np.float64)
    _check_stage_dims(p, v_i, u_next, z_next)
    th = p.theta
    k = -p.mass + dt * th * p.f_jac_u(u_next, z_next)
    c = p.mass + dt * (1.0 - th) * p.f_jac_u(v_i, z_next)
    b = dt * th * p.f_jac_z(u_next, z_next) + dt * (1.0 - th) * p.f_jac_z(v_i, z_next)
    return k, c, b


def forward_solve(p: ProblemSpec, controls, grid: TimeGrid,
                  newton_tol: float = 1e-12) -> Trajectory:
    """March the nonlinear theta-method forward from ``p.u0``.

    Each implicit step is solved by Newton with the K stage block as
    Jacobian (full steps, no globalization); theta=0 reduces to a single
    linear solve with -M.  Raises :class:`NewtonDivergence` after
    ``NEWTON_MAX_ITERS`` iterations.
    """
    controls = np.asarray(controls, dtype=np.float64)
    n = grid.n_steps
    if controls.shape != (n, p.n_z):
        raise DimensionMismatch(
            f"controls shape {controls.shape} != ({n}, {p.n_z})"
        )
    dt = grid.dt
    states = np.empty((n, p.n_u))
    u_prev = np.array(p.u0, dtype=np.float64)
    for i in range(n):
        z = controls[i]
        u = u_prev.copy()
        tol = newton_tol * linalg.norm2(p.mass @ u_prev) + newton_tol
        converged = False
        for _ in range(NEWTON_MAX_ITERS):
            r = theta_residual(p, u_prev, u, z, dt)
            if linalg.norm2(r) <= tol:
                converged = True
                break
            k, _, _ = stage_blocks(p, u_prev, u, z, dt)
            du = linalg.lu_solve(linalg.lu_factor(k), r)
            u = u - du
        if not converged:
            r = theta_residual(p, u_prev, u, z, dt)
            if linalg.norm2(r) > tol:
                raise NewtonDivergence(
                    f"step {i + 1}: Newton residual {linalg.norm2(r):.3e} > {tol:.3e}"
                )
        states[i] = u
        u_prev = u
    return Trajectory(states=states, controls=controls.copy())


def stage_weights(p: ProblemSpec, dt: float, i: int, n_steps: int):
    """Objective weight blocks (Q_u, Q_v, Q_z) for stage index i (0-based).

    Rectangle-rule quadrature with weight dt per interval; the tracking
    term splits evenly over the true and virtual states, so
    Q_u = Q_v = 0.5*dt*w_state and Q_z = dt*w_control.  A terminal weight,
    when present, is added (again split evenly) to the last stage.
    """
    q_u = 0.5 * dt * p.w_state
    q_z = dt * p.w_control
    if p.w_terminal is not None and i == n_steps - 1:
        q_u = q_u + 0.5 * p.w_terminal
    return q_u, q_u.copy(), q_z


def objective_and_gradient(p: ProblemSpec, traj: Trajectory, virtual: np.ndarray):
    """Tracking objective split evenly over true and virtual states.

    Evaluates ``0.5*J(v, z) + 0.5*J(u, z)`` for the rectangle-rule
    discretization of the tracking functional and returns
    ``(value, grad_u, grad_v, grad_z)`` with exact gradients of the
    discrete value.
    """
    u = np.asarray(traj.states, dtype=np.float64)
    z = np.asarray(traj.controls, dtype=np.float64)
    v = np.asarray(virtual, dtype=np.float64)
    n = p.n_steps
    if u.shape != (n, p.n_u) or v.shape != (n, p.n_u) or z.shape != (n, p.n_z):
        raise DimensionMismatch("trajectory/virtual shapes do not match the spec")
    value = 0.0
    grad_u = np.empty_like(u)
    grad_v = np.empty_like(v)
    grad_z = np.empty_like(z)
    dt = p.dt
    for i in range(n):
        q_u, q_v, q_z = stage_weights(p, dt, i, n)
        du = u[i] - p.u_target[i]
        dv = v[i] - p.u_target[i]
        dz = z[i] - p.z_target[i]
        gu = q_u @ du
        gv = q_v @ dv
        gz = q_z @ dz
        value += 0.5 * (du @ gu + dv @ gv + dz @ gz)
        grad_u[i] = gu
        grad_v[i] = gv
        grad_z[i] = gz
    return value, grad_u, grad_v, grad_z
