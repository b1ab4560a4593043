"""Composite-step trust-region SQP driver.

Each iteration improves feasibility with a quasi-normal step (Cauchy point
plus a Newton correction from an augmented-system solve), improves
optimality with a projected-CG tangential step whose nullspace projections
are further augmented-system solves, re-estimates the multipliers at the
trial point, and globalizes with an augmented-Lagrangian merit function.
All augmented systems are solved iteratively to a budgeted tolerance by
(F)GMRES, preconditioned by the multigrid-in-time hierarchy or one of the
flat fixed-point preconditioners.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import TempoKktError
from .kkt import StageBlocks, assemble_kkt, build_stage_blocks
from .krylov import LinearOperator, Preconditioner, fgmres, gmres, projected_cg
from .multigrid import MgHierarchy, build_hierarchy, default_levels, mg_preconditioner
from .smoothers import smoother_preconditioner
from .timedisc import (ProblemSpec, TimeGrid, Trajectory, forward_solve,
                       objective_and_gradient, theta_residual)

__all__ = [
    "SqpConfig",
    "SolverConfig",
    "SqpState",
    "StepStats",
    "SqpResult",
    "cauchy_point",
    "tolerance_budget",
    "sqp_solve",
    "AugmentedSystem",
]

logger = logging.getLogger("tempokkt.sqp")


@dataclass
class SqpConfig:
    """Trust-region SQP parameters.

    ``tau`` is the nominal linear-solver tolerance feeding the inexactness
    budgets; ``zeta`` bounds the quasi-normal fraction of the trust region.
    """

    tau: float = 1e-2
    zeta: float = 0.8
    gtol: float = 1e-6
    ctol: float = 1e-6
    max_sqp_iters: int = 30
    delta0: float = 10.0
    eta1: float = 1e-4
    eta2: float = 0.75
    expand: float = 2.0
    shrink: float = 0.5
    boundary_frac: float = 0.8
    penalty0: float = 1.0
    hessian: str = "exact-lagrangian"  # or "gauss-newton"
    cg_max_iters: int = 200

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0,1)")
        if not 0.0 < self.zeta < 1.0:
            raise ValueError("zeta must lie in (0,1)")


@dataclass
class SolverConfig:
    """Linear-solver and preconditioner selection for the augmented systems."""

    precond: str = "mg"  # mg | jacobi | fgs | bgs | sgs | none
    cycle: str = "w"
    levels: Optional[int] = None
    sweeps: int = 4
    omega: float = 1.0
    coarse_tol: float = 1e-2
    coarse_max_iters: int = 401
    outer: str = "fgmres"  # or "gmres"
    max_iters: int = 401
    restart: Optional[int] = None


@dataclass
class SqpState:
    """Current iterate, multipliers, trust region, and residuals."""

    u: np.ndarray
    v: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    trust_radius: float
    penalty: float
    iteration: int = 0
    kkt_residuals: tuple = (float("nan"), float("nan"))


@dataclass
class StepStats:
    """Per-iteration counters."""

    cg_iters: int = 0
    ls_calls: int = 0
    ls_iters_total: int = 0
    accepted: bool = False
    cnorm: float = float("nan")
    gnorm: float = float("nan")
    delta: float = float("nan")


@dataclass
class SqpResult:
    state: SqpState
    stats: List[StepStats]
    converged: bool
    iterations: int
    ls_calls: int
    ls_iters: int
    cg_iters: int
    coarse_calls: int
    coarse_iters: int
    objective: float

    @property
    def ls_average(self) -> float:
        return self.ls_iters / self.ls_calls if self.ls_calls else float("nan")

    @property
    def coarse_average(self) -> float:
        return self.coarse_iters / self.coarse_calls if self.coarse_calls \
            else float("nan")


def tolerance_budget(kind: str, b1_norm: float, b2_norm: float, delta: float,
                     tau: float, y1_norm: float = 0.0) -> float:
    """Absolute residual budget for one augmented-system solve.

    Realizes ``tau * min(|b1| + |b2|, max(|y1|, delta))`` with a floor of
    ``tau * 1e-3 * (|b1| + |b2|)``; monotone in tau, zero for a zero RHS.
    ``kind`` tags the requesting step (qn | proj | mult) for logging only.
    """
    total = b1_norm + b2_norm
    if total == 0.0:
        return 0.0
    budget = tau * min(total, max(y1_norm, delta))
    return max(budget, tau * 1e-3 * total)


def cauchy_point(jac_apply, jac_adjoint, c_flat: np.ndarray,
                 radius: float) -> np.ndarray:
    """Steepest-descent minimizer of the linearized infeasibility.

    Returns ``n_cp = -alpha * J^T c`` with
    ``alpha = min(|g|^2 / |J g|^2, radius / |g|)``; the curvature term is
    guarded against vanishing ``J g``.
    """
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    g = jac_adjoint(c_flat)
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0:
        return np.zeros_like(g)
    jg = jac_apply(g)
    curv = float(np.dot(jg, jg))
    alpha_bd = radius / gnorm
    alpha = alpha_bd if curv <= 0.0 else min(gnorm * gnorm / curv, alpha_bd)
    return -alpha * g


class AugmentedSystem:
    """The augmented system at one linearization point, with its
    preconditioner and flat-vector constraint/Hessian actions.

    Primal flat layout: ``concat(u.ravel(), v.ravel(), z.ravel())`` with
    (N, n_u)/(N, n_z) row blocks; dual flat layout:
    ``concat(lam.ravel(), mu.ravel())``.
    """

    def __init__(self, p: ProblemSpec, grid: TimeGrid, u, v, z,
                 solver: SolverConfig):
        self.p = p
        self.grid = grid
        self.u = np.asarray(u, dtype=np.float64)
        self.v = np.asarray(v, dtype=np.float64)
        self.z = np.asarray(z, dtype=np.float64)
        self.solver = solver
        self.stage = build_stage_blocks(p, grid.dt, self.u, self.v, self.z)
        self.kkt = assemble_kkt(self.stage)
        self.hierarchy: Optional[MgHierarchy] = None
        if solver.precond == "mg":
            levels = solver.levels
            if levels is None:
                levels = default_levels(grid.n_steps)
            self.hierarchy = build_hierarchy(
                p, self.u, self.v, self.z, grid, levels,
                sweeps=solver.sweeps, omega=solver.omega,
                cycle_kind=solver.cycle, coarse_tol=solver.coarse_tol,
                coarse_max_iters=solver.coarse_max_iters, check=False)
            self.prec = mg_preconditioner(self.hierarchy)
        elif solver.precond == "none":
            self.prec = None
        else:
            from .kkt import DiagonalSolver
            dsolve = DiagonalSolver(self.kkt)
            self.prec = smoother_preconditioner(self.kkt, dsolve,
                                                solver.precond)

    # --- flat-vector bookkeeping -------------------------------------
    @property
    def n(self) -> int:
        return self.grid.n_steps

    def split_primal(self, x: np.ndarray):
        n, nu, nz = self.n, self.p.n_u, self.p.n_z
        du = x[: n * nu].reshape(n, nu)
        dv = x[n * nu: 2 * n * nu].reshape(n, nu)
        dz = x[2 * n * nu:].reshape(n, nz)
        return du, dv, dz

    def merge_primal(self, du, dv, dz) -> np.ndarray:
        return np.concatenate([np.ravel(du), np.ravel(dv), np.ravel(dz)])

    def split_dual(self, y: np.ndarray):
        n, nu = self.n, self.p.n_u
        return y[: n * nu].reshape(n, nu), y[n * nu:].reshape(n, nu)

    def merge_dual(self, w1, w2) -> np.ndarray:
        return np.concatenate([np.ravel(w1), np.ravel(w2)])

    # --- constraint and objective actions -----------------------------
    def constraints(self, u=None, v=None, z=None):
        """Dynamics residuals c1 and continuity residuals c2, (N, n_u) each."""
        u = self.u if u is None else u
        v = self.v if v is None else v
        z = self.z if z is None else z
        p, dt, n = self.p, self.grid.dt, self.n
        c1 = np.empty((n, p.n_u))
        v_prev = p.u0
        for i in range(n):
            c1[i] = theta_residual(p, v_prev, u[i], z[i], dt)
            v_prev = v[i]
        c2 = u - v
        return c1, c2

    def apply_cx(self, x_flat: np.ndarray) -> np.ndarray:
        du, dv, dz = self.split_primal(x_flat)
        s = self.stage
        d1 = (np.matmul(s.k, du[:, :, None])[:, :, 0]
              + np.matmul(s.b, dz[:, :, None])[:, :, 0])
        if self.n > 1:
            d1[1:] += np.matmul(s.c[1:], dv[:-1, :, None])[:, :, 0]
        return self.merge_dual(d1, du - dv)

    def apply_cx_t(self, y_flat: np.ndarray) -> np.ndarray:
        w1, w2 = self.split_dual(y_flat)
        s = self.stage
        kt = np.transpose(s.k, (0, 2, 1))
        bt = np.transpose(s.b, (0, 2, 1))
        gu = np.matmul(kt, w1[:, :, None])[:, :, 0] + w2
        gv = -w2.copy()
        if self.n > 1:
            ct = np.transpose(s.c[1:], (0, 2, 1))
            gv[:-1] += np.matmul(ct, w1[1:, :, None])[:, :, 0]
        gz = np.matmul(bt, w1[:, :, None])[:, :, 0]
        return self.merge_primal(gu, gv, gz)

    def objective(self, u=None, v=None, z=None):
        u = self.u if u is None else u
        v = self.v if v is None else v
        z = self.z if z is None else z
        val, gu, gv, gz = objective_and_gradient(
            self.p, Trajectory(states=u, controls=z), v)
        return val, self.merge_primal(gu, gv, gz)

    def hessian_operator(self, lam: np.ndarray, mode: str) -> LinearOperator:
        """Hessian of the Lagrangian as a flat primal operator.

        The objective contributes the block-diagonal Q weights; in
        exact-lagrangian mode the dynamics add their second-derivative
        contractions weighted by the current multipliers (constraint
        curvature enters through F's state nonlinearity only; all shipped
        problems are control-affine).
        """
        s = self.stage
        p, dt, n = self.p, self.grid.dt, self.n
        theta = p.theta
        use_curv = (mode == "exact-lagrangian" and p.f_hess_vec is not None)

        def apply(x_flat):
            du, dv, dz = self.split_primal(x_flat)
            ou = np.matmul(s.q_u, du[:, :, None])[:, :, 0]
            ov = np.matmul(s.q_v, dv[:, :, None])[:, :, 0]
            oz = np.matmul(s.q_z, dz[:, :, None])[:, :, 0]
            if use_curv:
                if theta != 0.0:
                    for i in range(n):
                        ou[i] += dt * theta * p.f_hess_vec(
                            self.u[i], self.z[i], lam[i], du[i])
                if theta != 1.0:
                    for i in range(n - 1):
                        ov[i] += dt * (1.0 - theta) * p.f_hess_vec(
                            self.v[i], self.z[i + 1], lam[i + 1], dv[i])
            return self.merge_primal(ou, ov, oz)

        dim = n * (2 * p.n_u + p.n_z)
        return LinearOperator(dim=dim, apply=apply)

    # --- the augmented solve ------------------------------------------
    def solve(self, top_flat: np.ndarray, bottom_flat: np.ndarray,
              abs_budget: float, stats: Optional[StepStats] = None):
        """Solve the augmented system to the given absolute residual budget.

        ``top_flat`` fills the primal (u, v, z) rows, ``bottom_flat`` the
        multiplier (dynamics, continuity) rows.  Returns flat primal and
        dual solution parts plus the solver report.
        """
        tu, tv, tz = self.split_primal(top_flat)
        b3, b4 = self.split_dual(bottom_flat)
        rhs = self.kkt.layout.pack(tu, tv, tz, b3, b4)
        rnorm = float(np.linalg.norm(rhs))
        if rnorm == 0.0:
            zero = np.zeros(self.kkt.dim)
            yu, yv, yz, ylam, ymu = self.kkt.layout.unpack(zero)
            return (self.merge_primal(yu, yv, yz),
                    self.merge_dual(ylam, ymu), None)
        rel = min(max(abs_budget / rnorm, 1e-12), 0.5)
        runner = fgmres if self.solver.outer == "fgmres" else gmres
        x, report = runner(self.kkt.as_operator(), self.prec, rhs,
                           rel_tol=rel, max_iters=self.solver.max_iters,
                           restart=self.solver.restart)
        if stats is not None:
            stats.ls_calls += 1
            stats.ls_iters_total += report.iterations
        yu, yv, yz, ylam, ymu = self.kkt.layout.unpack(x)
        return (self.merge_primal(yu, yv, yz),
                self.merge_dual(ylam, ymu), report)

    def coarse_stat_counts(self):
        if self.hierarchy is None:
            return 0, 0
        return self.hierarchy.stats.calls, self.hierarchy.stats.iters


def _quasi_normal(aug: AugmentedSystem, c_flat, delta, cfg, stats):
    """Cauchy point plus augmented-system Newton correction, kept inside
    the zeta-fraction trust ball."""
    radius = cfg.zeta * delta
    n_cp = cauchy_point(aug.apply_cx, aug.apply_cx_t, c_flat, radius)
    ncp_norm = float(np.linalg.norm(n_cp))
    if ncp_norm >= radius * (1.0 - 1e-12):
        return n_cp
    resid = aug.apply_cx(n_cp) + c_flat
    budget = tolerance_budget("qn", ncp_norm, float(np.linalg.norm(resid)),
                              delta, cfg.tau)
    dn, _, _ = aug.solve(-n_cp, -resid, budget, stats)
    n = n_cp + dn
    nnorm = float(np.linalg.norm(n))
    if nnorm > radius:
        n *= radius / nnorm
    return n


def _tangential(aug: AugmentedSystem, hess_op, grad_l, n_step, delta, cfg, stats):
    """Projected-CG tangential step inside ||n + t|| <= delta."""
    g0 = grad_l + hess_op(n_step)
    zero_dual = np.zeros(2 * aug.n * aug.p.n_u)

    def project(r):
        budget = tolerance_budget("proj", float(np.linalg.norm(r)), 0.0,
                                  delta, cfg.tau)
        y1, _, _ = aug.solve(r, zero_dual, budget, stats)
        return y1

    nnorm = float(np.linalg.norm(n_step))
    radius = np.sqrt(max(delta * delta - nnorm * nnorm, 0.0))
    if radius <= 1e-14 * max(delta, 1.0):
        return np.zeros_like(n_step), 0
    pg = project(g0)
    res = projected_cg(hess_op, project, pg, radius, rel_tol=cfg.tau,
                       max_iters=cfg.cg_max_iters)
    t = res.step
    # boundary rule: n and t are only Q-orthogonal, so rescale if the
    # composite step overshoots the ball
    s_norm = float(np.linalg.norm(n_step + t))
    if s_norm > delta:
        tt = float(np.dot(t, t))
        if tt > 0.0:
            td = float(np.dot(n_step, t))
            disc = max(td * td - tt * (nnorm * nnorm - delta * delta), 0.0)
            sigma = (-td + np.sqrt(disc)) / tt
            t = min(max(sigma, 0.0), 1.0) * t
    return t, res.iterations


def _multiplier_update(aug_trial: AugmentedSystem, lam, mu, delta, cfg, stats):
    """Least-squares multiplier correction from the trial-point system."""
    _, gphi = aug_trial.objective()
    grad_l = gphi + aug_trial.apply_cx_t(
        aug_trial.merge_dual(lam, mu))
    gnorm = float(np.linalg.norm(grad_l))
    budget = tolerance_budget("mult", gnorm, 0.0, delta, cfg.tau)
    zero_dual = np.zeros(2 * aug_trial.n * aug_trial.p.n_u)
    _, dy, _ = aug_trial.solve(-grad_l, zero_dual, budget, stats)
    dlam, dmu = aug_trial.split_dual(dy)
    return lam + dlam, mu + dmu


def sqp_solve(p: ProblemSpec, g: TimeGrid, cfg: Optional[SqpConfig] = None,
              solver: Optional[SolverConfig] = None,
              initial: Optional[SqpState] = None) -> SqpResult:
    """Run the composite-step trust-region SQP loop.

    The default initial iterate propagates the dynamics at zero control
    (virtual states equal to states) with zero multipliers.  Returns the
    final state plus per-iteration statistics; ``converged`` is False when
    the iteration cap is reached (the best state is still returned).
    """
    cfg = cfg or SqpConfig()
    solver = solver or SolverConfig()
    n, nu, nz = g.n_steps, p.n_u, p.n_z
    if initial is None:
        traj = forward_solve(p, np.zeros((n, nz)), g)
        state = SqpState(u=traj.states.copy(), v=traj.states.copy(),
                         z=np.zeros((n, nz)), lam=np.zeros((n, nu)),
                         mu=np.zeros((n, nu)), trust_radius=cfg.delta0,
                         penalty=cfg.penalty0)
    else:
        state = initial

    aug = AugmentedSystem(p, g, state.u, state.v, state.z, solver)
    stats_list: List[StepStats] = []
    converged = False
    tot_coarse_calls = tot_coarse_iters = 0

    for k in range(cfg.max_sqp_iters):
        it = StepStats(delta=state.trust_radius)
        c1, c2 = aug.constraints()
        c_flat = aug.merge_dual(c1, c2)
        cnorm = float(np.linalg.norm(c_flat))
        fval, gphi = aug.objective()
        dual = aug.merge_dual(state.lam, state.mu)
        grad_l = gphi + aug.apply_cx_t(dual)
        gnorm = float(np.linalg.norm(grad_l))
        it.cnorm, it.gnorm = cnorm, gnorm
        state.kkt_residuals = (gnorm, cnorm)
        state.iteration = k
        if gnorm <= cfg.gtol and cnorm <= cfg.ctol:
            converged = True
            logger.info("k=%d |c|=%.6e |gradL|=%.6e delta=%.3e accepted=1 "
                        "cg=0 ls_calls=0 ls_avg=0", k, cnorm, gnorm,
                        state.trust_radius)
            break

        hess_op = aug.hessian_operator(state.lam, cfg.hessian)
        n_step = _quasi_normal(aug, c_flat, state.trust_radius, cfg, it)
        t_step, cg_iters = _tangential(aug, hess_op, grad_l, n_step,
                                       state.trust_radius, cfg, it)
        it.cg_iters = cg_iters
        s = n_step + t_step

        du, dv, dz = aug.split_primal(s)
        u_t, v_t, z_t = state.u + du, state.v + dv, state.z + dz
        aug_trial = AugmentedSystem(p, g, u_t, v_t, z_t, solver)
        lam_t, mu_t = _multiplier_update(aug_trial, state.lam, state.mu,
                                         state.trust_radius, cfg, it)

        # merit-function bookkeeping (augmented Lagrangian)
        c1_t, c2_t = aug_trial.constraints()
        c_t_flat = aug_trial.merge_dual(c1_t, c2_t)
        f_t, _ = aug_trial.objective()
        dlam_flat = aug.merge_dual(lam_t - state.lam, mu_t - state.mu)
        cxs_c = aug.apply_cx(s) + c_flat
        quad = (float(np.dot(grad_l, s)) + 0.5 * float(np.dot(s, hess_op(s)))
                + float(np.dot(dlam_flat, cxs_c)))
        vred = cnorm * cnorm - float(np.dot(cxs_c, cxs_c))
        nu_pen = state.penalty
        if vred > 0.0 and (-quad + nu_pen * vred) < 0.5 * nu_pen * vred:
            nu_pen = max(2.0 * nu_pen, 2.0 * quad / vred + 1e-8)
        pred = -quad + nu_pen * vred
        ared = ((fval + float(np.dot(dual, c_flat)) + nu_pen * cnorm * cnorm)
                - (f_t + float(np.dot(aug.merge_dual(lam_t, mu_t), c_t_flat))
                   + nu_pen * float(np.dot(c_t_flat, c_t_flat))))
        state.penalty = nu_pen
        ratio = ared / pred if pred > 0.0 else -np.inf

        s_norm = float(np.linalg.norm(s))
        accepted = bool(np.isfinite(ratio) and ratio >= cfg.eta1)
        if accepted:
            state.u, state.v, state.z = u_t, v_t, z_t
            state.lam, state.mu = lam_t, mu_t
            cc, ci = aug.coarse_stat_counts()
            tot_coarse_calls += cc
            tot_coarse_iters += ci
            aug = aug_trial
            if ratio >= cfg.eta2 and s_norm >= cfg.boundary_frac * state.trust_radius:
                state.trust_radius = min(state.trust_radius * cfg.expand, 1e10)
        else:
            cc, ci = aug_trial.coarse_stat_counts()
            tot_coarse_calls += cc
            tot_coarse_iters += ci
            state.trust_radius *= cfg.shrink
        it.accepted = accepted
        stats_list.append(it)
        ls_avg = it.ls_iters_total / it.ls_calls if it.ls_calls else 0.0
        logger.info("k=%d |c|=%.6e |gradL|=%.6e delta=%.3e accepted=%d "
                    "cg=%d ls_calls=%d ls_avg=%.2f", k, cnorm, gnorm,
                    state.trust_radius, int(accepted), cg_iters,
                    it.ls_calls, ls_avg)
        state.iteration = k + 1
        if state.trust_radius < 1e-13:
            break

    cc, ci = aug.coarse_stat_counts()
    tot_coarse_calls += cc
    tot_coarse_iters += ci
    fval, _ = aug.objective()
    return SqpResult(
        state=state, stats=stats_list, converged=converged,
        iterations=state.iteration,
        ls_calls=sum(s.ls_calls for s in stats_list),
        ls_iters=sum(s.ls_iters_total for s in stats_list),
        cg_iters=sum(s.cg_iters for s in stats_list),
        coarse_calls=tot_coarse_calls, coarse_iters=tot_coarse_iters,
        objective=fval)
