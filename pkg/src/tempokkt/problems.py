"""Concrete problem builders: van der Pol oscillator control, 1D viscous
Burgers' control with piecewise-linear finite elements, and Neumann
boundary control of the 1D heat equation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .timedisc import ProblemSpec, TimeGrid, forward_solve

__all__ = [
    "VanDerPolConfig",
    "BurgersConfig",
    "HeatNeumannConfig",
    "build_vanderpol",
    "build_burgers",
    "build_heat_neumann",
]


@dataclass
class VanDerPolConfig:
    """Controlled van der Pol oscillator: track the near-circular orbit
    generated with a tiny damping parameter."""

    mu: float = 1.0
    alpha: float = 0.1
    t_final: float = 8.0
    data_mu: float = 0.01
    u_init: tuple = (1.0, 1.0)

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")
        if self.t_final <= 0.0:
            raise ValueError("t_final must be positive")


def build_vanderpol(cfg: VanDerPolConfig, g: TimeGrid, theta: float = 1.0) -> ProblemSpec:
    """Two-state oscillator with additive two-component control.

    F(u, z) = (u2 + z1, mu*(1 - u1^2)*u2 - u1 + z2); the tracking data is
    the trajectory of the same oscillator with damping ``data_mu`` and
    zero control, integrated on the same grid.
    """
    mu = cfg.mu
    mass = np.eye(2)
    u0 = np.array(cfg.u_init, dtype=np.float64)

    def f_eval(u, z, _mu=mu):
        return np.array([u[1] + z[0], _mu * (1.0 - u[0] ** 2) * u[1] - u[0] + z[1]])

    def f_jac_u(u, z, _mu=mu):
        return np.array([
            [0.0, 1.0],
            [-2.0 * _mu * u[0] * u[1] - 1.0, _mu * (1.0 - u[0] ** 2)],
        ])

    def f_jac_z(u, z):
        return np.eye(2)

    def f_hess_vec(u, z, lam, du, _mu=mu):
        # second derivative of lam.F: only F_2 is nonlinear in u
        h = lam[1] * np.array([
            [-2.0 * _mu * u[1], -2.0 * _mu * u[0]],
            [-2.0 * _mu * u[0], 0.0],
        ])
        return h @ du

    data_spec = ProblemSpec(
        n_u=2, n_z=2, mass=mass,
        f_eval=lambda u, z, _mu=cfg.data_mu: np.array(
            [u[1] + z[0], _mu * (1.0 - u[0] ** 2) * u[1] - u[0] + z[1]]),
        f_jac_u=lambda u, z, _mu=cfg.data_mu: np.array(
            [[0.0, 1.0], [-2.0 * _mu * u[0] * u[1] - 1.0, _mu * (1.0 - u[0] ** 2)]]),
        f_jac_z=f_jac_z,
        u0=u0, theta=theta, dt=g.dt,
        u_target=np.zeros((g.n_steps, 2)),
        z_target=np.zeros((g.n_steps, 2)),
        w_state=np.eye(2), w_control=cfg.alpha * np.eye(2),
        name="vanderpol-data",
    )
    target_traj = forward_solve(data_spec, np.zeros((g.n_steps, 2)), g)

    return ProblemSpec(
        n_u=2, n_z=2, mass=mass,
        f_eval=f_eval, f_jac_u=f_jac_u, f_jac_z=f_jac_z,
        u0=u0, theta=theta, dt=g.dt,
        u_target=target_traj.states,
        z_target=np.zeros((g.n_steps, 2)),
        w_state=np.eye(2), w_control=cfg.alpha * np.eye(2),
        f_hess_vec=f_hess_vec,
        name="vanderpol",
    )


@dataclass
class BurgersConfig:
    """Distributed control of viscous Burgers' flow on [0, 1] with
    homogeneous Dirichlet ends; the control maintains the initial step
    profile over time."""

    nu: float = 1e-2
    alpha: float = 0.1
    n_elems: int = 128
    t_final: float = 1.0
    theta: float = 0.5

    def __post_init__(self):
        if self.nu <= 0.0:
            raise ValueError("nu must be positive")
        if self.n_elems < 2:
            raise ValueError("n_elems must be >= 2")


def _burgers_convection(u):
    """Galerkin convection vector N_i(u) = integral(u u_x phi_i) on the
    uniform interior mesh; closed-form cubic element integrals."""
    up = np.concatenate([u[1:], [0.0]])   # u_{i+1}, Dirichlet 0 past the end
    um = np.concatenate([[0.0], u[:-1]])  # u_{i-1}
    return (up * up + u * up - u * um - um * um) / 6.0


def _burgers_convection_jac(u):
    n = u.shape[0]
    j = np.zeros((n, n))
    up = np.concatenate([u[1:], [0.0]])
    um = np.concatenate([[0.0], u[:-1]])
    d = (up - um) / 6.0
    lo = (-u[1:] - 2.0 * u[:-1]) / 6.0   # dN_i/du_{i-1}
    hi = (2.0 * u[1:] + u[:-1]) / 6.0    # dN_i/du_{i+1}
    j[np.arange(n), np.arange(n)] = d
    j[np.arange(1, n), np.arange(n - 1)] = lo
    j[np.arange(n - 1), np.arange(1, n)] = hi
    return j


def _tridiag(n, lo, di, hi):
    a = np.zeros((n, n))
    a[np.arange(n), np.arange(n)] = di
    a[np.arange(1, n), np.arange(n - 1)] = lo
    a[np.arange(n - 1), np.arange(1, n)] = hi
    return a


def build_burgers(cfg: BurgersConfig, g: TimeGrid) -> ProblemSpec:
    """Piecewise-linear FE semi-discretization with interior unknowns only.

    F(u, z) = -nu*A u - N(u) + M z with the standard tridiagonal mass
    h/6*[1,4,1] and stiffness 1/h*[-1,2,-1] matrices and exact Galerkin
    convection (no stabilization).  The control shares the state's nodal
    basis, so N_z = N_u per step.
    """
    n = cfg.n_elems - 1  # interior nodes
    h = 1.0 / cfg.n_elems
    mass = _tridiag(n, h / 6.0, 4.0 * h / 6.0, h / 6.0)
    stiff = _tridiag(n, -1.0 / h, 2.0 / h, -1.0 / h)
    nu = cfg.nu

    def f_eval(u, z):
        return -nu * (stiff @ u) - _burgers_convection(u) + mass @ z

    def f_jac_u(u, z):
        return -nu * stiff - _burgers_convection_jac(u)

    def f_jac_z(u, z):
        return mass

    def f_hess_vec(u, z, lam, du):
        # N is quadratic, so the Hessian of lam . N is constant in u;
        # convection enters F with a minus sign.
        lam_p = np.concatenate([lam[1:], [0.0]])
        lam_m = np.concatenate([[0.0], lam[:-1]])
        diag = (lam_m - lam_p) / 3.0
        off = (lam[:-1] - lam[1:]) / 6.0
        out = diag * du
        out[:-1] += off * du[1:]
        out[1:] += off * du[:-1]
        return -out

    x = h * np.arange(1, n + 1)
    step = np.where(x <= 0.5, 1.0, 0.0)
    u_target = np.tile(step, (g.n_steps, 1))

    return ProblemSpec(
        n_u=n, n_z=n, mass=mass,
        f_eval=f_eval, f_jac_u=f_jac_u, f_jac_z=f_jac_z,
        u0=step.copy(), theta=cfg.theta, dt=g.dt,
        u_target=u_target,
        z_target=np.zeros((g.n_steps, n)),
        w_state=mass, w_control=cfg.alpha * mass,
        f_hess_vec=f_hess_vec,
        name="burgers",
    )


@dataclass
class HeatNeumannConfig:
    """Neumann boundary control of the 1D heat equation; the scalar
    control is the left boundary flux.  Source, right flux, initial and
    target data are fixed smooth defaults (see :func:`build_heat_neumann`)."""

    alpha1: float = 1e3
    alpha2: float = 0.0
    n_cells: int = 16
    t_final: float = 1.0

    def __post_init__(self):
        if self.alpha1 < 0.0 or self.alpha2 < 0.0:
            raise ValueError("tracking weights must be nonnegative")
        if self.alpha1 == 0.0 and self.alpha2 == 0.0:
            raise ValueError("alpha1 and alpha2 cannot both be zero")


def build_heat_neumann(cfg: HeatNeumannConfig, g: TimeGrid,
                       theta: float = 1.0) -> ProblemSpec:
    """Piecewise-linear FE heat operator with flux boundary data.

    All n_cells+1 nodes are unknowns.  Weak form gives
    F(u, z) = -A u + f - z*e_first + r*e_last; the defaults are f = 0,
    r = 0, u0(x) = cos(pi x), and target u_d = 0 (drive the rod to zero
    through the left flux).  These data are artifact defaults, chosen for
    smoothness; the preconditioner studies depend only on the structure.
    """
    nn = cfg.n_cells + 1
    h = 1.0 / cfg.n_cells
    mass = _tridiag(nn, h / 6.0, 4.0 * h / 6.0, h / 6.0)
    mass[0, 0] = h / 3.0
    mass[-1, -1] = h / 3.0
    stiff = _tridiag(nn, -1.0 / h, 2.0 / h, -1.0 / h)
    stiff[0, 0] = 1.0 / h
    stiff[-1, -1] = 1.0 / h

    f_src = np.zeros(nn)
    r_flux = 0.0
    e_first = np.zeros(nn)
    e_first[0] = 1.0
    e_last = np.zeros(nn)
    e_last[-1] = 1.0

    def f_eval(u, z):
        return -stiff @ u + f_src - z[0] * e_first + r_flux * e_last

    def f_jac_u(u, z):
        return -stiff

    def f_jac_z(u, z):
        return -e_first.reshape(nn, 1)

    x = h * np.arange(nn)
    u0 = np.cos(np.pi * x)

    return ProblemSpec(
        n_u=nn, n_z=1, mass=mass,
        f_eval=f_eval, f_jac_u=f_jac_u, f_jac_z=f_jac_z,
        u0=u0, theta=theta, dt=g.dt,
        u_target=np.zeros((g.n_steps, nn)),
        z_target=np.zeros((g.n_steps, 1)),
        w_state=cfg.alpha1 * mass,
        w_control=np.array([[1.0]]),
        w_terminal=(cfg.alpha2 * mass) if cfg.alpha2 > 0.0 else None,
        name="heat-neumann",
    )
