"""Multigrid-in-time preconditioner: grid transfers, the rediscretized
operator hierarchy, V/F/W cycles, and the SGS-preconditioned GMRES
coarse solver.

Transfers act per variable kind.  States, multipliers and their virtual
counterparts use linear-interpolation prolongation (even fine nodes copied
from the coarse grid, odd nodes averaged from their coarse neighbours) and
injection restriction; piecewise-constant controls use copy-down
prolongation and 2-interval-average restriction.  Both maps preserve
constants exactly and satisfy restrict(prolong(x)) = x.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import DimensionMismatch, IndivisibleSteps, SingularBlock
from .kkt import (BlockTriKKT, DiagonalSolver, KktLayout, StageBlocks,
                  assemble_kkt, build_stage_blocks, check_theorem1)
from .krylov import LinearOperator, Preconditioner, gmres
from .smoothers import jacobi_apply, smoother_preconditioner
from .timedisc import ProblemSpec, TimeGrid

__all__ = [
    "prolong_state",
    "restrict_state",
    "prolong_control",
    "restrict_control",
    "TransferOps",
    "MgLevel",
    "MgHierarchy",
    "build_hierarchy",
    "cycle",
    "coarse_solve",
    "mg_preconditioner",
    "default_levels",
]

logger = logging.getLogger("tempokkt.multigrid")

CYCLE_KINDS = ("v", "f", "w")


def prolong_state(coarse: np.ndarray) -> np.ndarray:
    """Coarse node values (rows 1..Nc) to fine values (rows 1..2Nc).

    Even fine nodes are copied from the coarse grid; odd fine nodes are
    averaged from their two coarse neighbours.  The first fine node has a
    single in-range neighbour, whose value it takes, which keeps constant
    sequences exactly constant.
    """
    coarse = np.asarray(coarse)
    nc = coarse.shape[0]
    fine = np.empty((2 * nc,) + coarse.shape[1:], dtype=coarse.dtype)
    fine[1::2] = coarse
    fine[0] = coarse[0]
    if nc > 1:
        fine[2::2] = 0.5 * (coarse[:-1] + coarse[1:])
    return fine


def restrict_state(fine: np.ndarray) -> np.ndarray:
    """Injection: coarse node j takes fine node 2j."""
    fine = np.asarray(fine)
    if fine.shape[0] % 2 != 0:
        raise DimensionMismatch("fine sequence length must be even")
    return fine[1::2].copy()


def prolong_control(coarse: np.ndarray) -> np.ndarray:
    """Piecewise-constant injection: both fine subintervals copy coarse."""
    coarse = np.asarray(coarse)
    nc = coarse.shape[0]
    fine = np.empty((2 * nc,) + coarse.shape[1:], dtype=coarse.dtype)
    fine[0::2] = coarse
    fine[1::2] = coarse
    return fine


def restrict_control(fine: np.ndarray) -> np.ndarray:
    """2-interval average."""
    fine = np.asarray(fine)
    if fine.shape[0] % 2 != 0:
        raise DimensionMismatch("fine sequence length must be even")
    return 0.5 * (fine[0::2] + fine[1::2])


_STATE_KINDS = ("u", "v", "lam", "mu")


@dataclass
class TransferOps:
    """Grid transfers between consecutive KKT layouts (factor-2 in time)."""

    fine_steps: int
    coarse_steps: int
    fine_layout: KktLayout = field(repr=False)
    coarse_layout: KktLayout = field(repr=False)

    def restrict_kkt(self, x: np.ndarray) -> np.ndarray:
        lf, lc = self.fine_layout, self.coarse_layout
        if x.shape != (lf.dim,):
            raise DimensionMismatch(f"vector shape {x.shape} != ({lf.dim},)")
        out = np.empty(lc.dim)
        for kind in _STATE_KINDS:
            out[lc.rows(kind)] = x[lf.rows(kind)[1::2]]
        zf = lf.rows("z")
        out[lc.rows("z")] = 0.5 * (x[zf[0::2]] + x[zf[1::2]])
        return out

    def prolong_kkt(self, x: np.ndarray) -> np.ndarray:
        lf, lc = self.fine_layout, self.coarse_layout
        if x.shape != (lc.dim,):
            raise DimensionMismatch(f"vector shape {x.shape} != ({lc.dim},)")
        out = np.empty(lf.dim)
        for kind in _STATE_KINDS:
            rc = lc.rows(kind)
            rf = lf.rows(kind)
            vals = x[rc]
            out[rf[1::2]] = vals
            out[rf[0]] = vals[0]
            if self.coarse_steps > 1:
                out[rf[2::2]] = 0.5 * (vals[:-1] + vals[1:])
        rc = lc.rows("z")
        rf = lf.rows("z")
        out[rf[0::2]] = x[rc]
        out[rf[1::2]] = x[rc]
        return out


@dataclass
class MgLevel:
    """One rung of the hierarchy: rediscretized operator plus its
    factored diagonal."""

    n_steps: int
    dt: float
    stage: StageBlocks
    kkt: BlockTriKKT
    dsolve: DiagonalSolver


@dataclass
class CoarseStats:
    calls: int = 0
    iters: int = 0

    @property
    def average(self) -> float:
        return self.iters / self.calls if self.calls else float("nan")


@dataclass
class MgHierarchy:
    """Ladder of block-tridiagonal operators with transfers and the
    coarse-solver configuration."""

    levels: List[MgLevel]
    transfers: List[TransferOps]
    sweeps: int = 4
    omega: float = 1.0
    cycle_kind: str = "v"
    coarse_tol: float = 1e-2
    coarse_max_iters: int = 401
    stats: CoarseStats = field(default_factory=CoarseStats)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def fine(self) -> MgLevel:
        return self.levels[0]


def default_levels(n_steps: int, coarsest: int = 16) -> int:
    """Deepest hierarchy whose coarsest grid keeps >= ``coarsest`` steps."""
    levels = 1
    n = n_steps
    while n % 2 == 0 and n // 2 >= coarsest:
        n //= 2
        levels += 1
    return levels


def build_hierarchy(p: ProblemSpec, u_seq, v_seq, z_seq, g: TimeGrid,
                    levels: int, sweeps: int = 4, omega: float = 1.0,
                    cycle_kind: str = "v", coarse_tol: float = 1e-2,
                    coarse_max_iters: int = 401,
                    check: bool = True) -> MgHierarchy:
    """Assemble, factor, and verify the operator ladder.

    Coarse operators are rediscretizations: the time step doubles per
    level, the stage Jacobians are re-linearized at the restricted iterate
    (injection for states, 2-interval averages for controls), and the
    objective weights are rebuilt with the coarse spacing.
    """
    if cycle_kind not in CYCLE_KINDS:
        raise ValueError(f"unknown cycle kind {cycle_kind!r}")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    n = g.n_steps
    if n % (1 << (levels - 1)) != 0:
        raise IndivisibleSteps(
            f"{n} steps not divisible by 2^{levels - 1}")
    if n // (1 << (levels - 1)) < 2 and levels > 1:
        raise IndivisibleSteps("coarsest level must keep at least 2 steps")

    u_seq = np.asarray(u_seq, dtype=np.float64)
    v_seq = np.asarray(v_seq, dtype=np.float64)
    z_seq = np.asarray(z_seq, dtype=np.float64)
    mg_levels = []
    transfers = []
    n_l, dt_l = n, g.dt
    for lvl in range(levels):
        stage = build_stage_blocks(p, dt_l, u_seq, v_seq, z_seq)
        if check:
            report = check_theorem1(stage)
            if not report.passed:
                cond, idx = report.failures()[0]
                raise SingularBlock(idx, f"level {lvl}: hypothesis {cond} "
                                         f"fails at stage {idx}")
        a = assemble_kkt(stage)
        mg_levels.append(MgLevel(n_steps=n_l, dt=dt_l, stage=stage,
                                 kkt=a, dsolve=DiagonalSolver(a)))
        if lvl < levels - 1:
            transfers.append(TransferOps(
                fine_steps=n_l, coarse_steps=n_l // 2,
                fine_layout=a.layout,
                coarse_layout=KktLayout(n_l // 2, a.n_u, a.n_z)))
            u_seq = u_seq[1::2]
            v_seq = v_seq[1::2]
            z_seq = 0.5 * (z_seq[0::2] + z_seq[1::2])
            n_l //= 2
            dt_l *= 2.0
    return MgHierarchy(levels=mg_levels, transfers=transfers, sweeps=sweeps,
                       omega=omega, cycle_kind=cycle_kind,
                       coarse_tol=coarse_tol, coarse_max_iters=coarse_max_iters)


def coarse_solve(h: MgHierarchy, r: np.ndarray, rel_tol: Optional[float] = None,
                 max_iters: Optional[int] = None) -> np.ndarray:
    """SGS-preconditioned GMRES on the coarsest operator, from a zero guess.

    Returns the (possibly inexact) solution of A_c e = r; iteration counts
    accumulate into ``h.stats``.
    """
    lev = h.levels[-1]
    rel_tol = h.coarse_tol if rel_tol is None else rel_tol
    max_iters = h.coarse_max_iters if max_iters is None else max_iters
    prec = smoother_preconditioner(lev.kkt, lev.dsolve, "sgs")
    x, report = gmres(lev.kkt.as_operator(), prec, r, x0=None,
                      rel_tol=rel_tol, max_iters=max_iters)
    h.stats.calls += 1
    h.stats.iters += report.iterations
    return x


def _trace(h, level, phase, lev, b, x):
    if logger.isEnabledFor(logging.DEBUG):
        rnorm = float(np.linalg.norm(b - lev.kkt.apply(x)))
        logger.debug("level=%d phase=%s rnorm=%.6e", level, phase, rnorm)


def cycle(h: MgHierarchy, level: int, b: np.ndarray,
          x0: Optional[np.ndarray] = None, kind: Optional[str] = None) -> np.ndarray:
    """One multigrid cycle at the given level.

    Pre-smooth with block Jacobi, restrict the residual, solve the coarse
    problem (recursively: V recurses once, W twice, F does one F followed
    by one V), prolong the correction, post-smooth.
    """
    kind = h.cycle_kind if kind is None else kind
    lev = h.levels[level]
    if level == h.n_levels - 1:
        e = coarse_solve(h, b) if x0 is None else \
            (x0 + coarse_solve(h, b - lev.kkt.apply(x0)))
        _trace(h, level, "coarse", lev, b, e)
        return e
    x = np.zeros(lev.kkt.dim) if x0 is None else np.asarray(x0, dtype=np.float64)
    x = jacobi_apply(lev.kkt, lev.dsolve, b, x, h.sweeps, h.omega)
    _trace(h, level, "pre", lev, b, x)
    t = h.transfers[level]
    r = t.restrict_kkt(b - lev.kkt.apply(x))
    if kind == "v":
        e = cycle(h, level + 1, r, None, "v")
    elif kind == "w":
        e = cycle(h, level + 1, r, None, "w")
        e = cycle(h, level + 1, r, e, "w")
    else:  # f
        e = cycle(h, level + 1, r, None, "f")
        e = cycle(h, level + 1, r, e, "v")
    x = x + t.prolong_kkt(e)
    _trace(h, level, "coarse", lev, b, x)
    x = jacobi_apply(lev.kkt, lev.dsolve, b, x, h.sweeps, h.omega)
    _trace(h, level, "post", lev, b, x)
    return x


def mg_preconditioner(h: MgHierarchy) -> Preconditioner:
    """One cycle from a zero guess, as a right preconditioner.

    Flexible: the inner coarse GMRES stops on a relative-residual test, so
    the map is not a fixed linear operator unless the coarse solve is
    exact.
    """
    return Preconditioner(apply=lambda r: cycle(h, 0, r), is_flexible=True)
