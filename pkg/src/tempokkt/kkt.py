"""Assembly of the virtual-variable augmented system in block-tridiagonal
ordering, its D/L/U splitting, per-block factorization, the permutation
between the variable-clustered and time-clustered orderings, and the
diagonal-nonsingularity verification.

Block-row layout (time-clustered ordering, N time steps):

* block 0, size ``2*n_u + n_z``: unknowns ``(u_1, z_1, lam_1)``;
* block i, i = 1..N-1, size ``4*n_u + n_z``:
  ``(v_i, u_{i+1}, z_{i+1}, mu_i, lam_{i+1})``;
* block N, size ``2*n_u``: ``(v_N, mu_N)``.

The only inter-block couplings are the continuity identities: block row i
carries ``+I`` from its ``mu_i`` rows to the ``u_i`` columns of block i-1,
and the operator is symmetric, so the upper couplings are their
transposes.  Global dimension is ``N*(4*n_u + n_z)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from . import linalg
from .errors import DimensionMismatch, SingularBlock, SingularMatrix
from .krylov import LinearOperator
from .timedisc import ProblemSpec, stage_blocks as stage_jacobians, stage_weights

__all__ = [
    "StageBlocks",
    "KktLayout",
    "BlockTriKKT",
    "build_stage_blocks",
    "assemble_kkt",
    "factor_diagonal",
    "DiagonalSolver",
    "split_parts",
    "from_clustered",
    "to_clustered",
    "clustered_permutation",
    "assemble_rhs",
    "check_theorem1",
    "Theorem1Report",
    "dump_matrix_market",
]

KINDS = ("u", "v", "z", "lam", "mu")


@dataclass
class StageBlocks:
    """Per-time-index linearization matrices and objective weights.

    Arrays are stacked over the N stages: ``k[i] = K_i``, ``c[i] = C_i``,
    ``b[i] = B_i`` (``c[0]`` is defined with ``v_0 = u_0`` but never enters
    the operator), and the symmetric positive definite weights
    ``q_u[i], q_v[i], q_z[i]``.
    """

    k: np.ndarray    # (N, n_u, n_u)
    c: np.ndarray    # (N, n_u, n_u)
    b: np.ndarray    # (N, n_u, n_z)
    q_u: np.ndarray  # (N, n_u, n_u)
    q_v: np.ndarray  # (N, n_u, n_u)
    q_z: np.ndarray  # (N, n_z, n_z)

    @property
    def n_steps(self) -> int:
        return self.k.shape[0]

    @property
    def n_u(self) -> int:
        return self.k.shape[1]

    @property
    def n_z(self) -> int:
        return self.b.shape[2]


def metric_weights(p: ProblemSpec, dt: float, i: int, n_steps: int):
    """Inner-product blocks (Q_u, Q_v, Q_z) of the augmented system.

    The state blocks carry the tracking quadrature, Q_u = Q_v =
    0.5*dt*w_state (terminal weight folded into the last stage); the
    control block is the unscaled penalty weight, Q_z = w_control.
    Scaling the control block by dt as well makes the control modes
    collapse with refinement and destroys the flat iteration counts of
    both the Gauss-Seidel and the multigrid preconditioners, so the
    time-quadrature factor stays out of the metric on the control space.
    """
    q_u = 0.5 * dt * p.w_state
    if p.w_terminal is not None and i == n_steps - 1:
        q_u = q_u + 0.5 * p.w_terminal
    return q_u, q_u.copy(), p.w_control.copy()


def build_stage_blocks(p: ProblemSpec, dt: float, u_seq, v_seq, z_seq) -> StageBlocks:
    """Linearize every stage at the iterate (u, v, z) with spacing dt.

    ``v_0 = u_0`` (the initial condition) feeds stage 0; the metric
    weights are rebuilt for the given dt so coarse-level operators stay
    consistent rediscretizations.
    """
    u_seq = np.asarray(u_seq, dtype=np.float64)
    v_seq = np.asarray(v_seq, dtype=np.float64)
    z_seq = np.asarray(z_seq, dtype=np.float64)
    n = u_seq.shape[0]
    nu, nz = p.n_u, p.n_z
    k = np.empty((n, nu, nu))
    c = np.empty((n, nu, nu))
    b = np.empty((n, nu, nz))
    q_u = np.empty((n, nu, nu))
    q_v = np.empty((n, nu, nu))
    q_z = np.empty((n, nz, nz))
    v_prev = np.asarray(p.u0, dtype=np.float64)
    for i in range(n):
        ki, ci, bi = stage_jacobians(p, v_prev, u_seq[i], z_seq[i], dt)
        k[i], c[i], b[i] = ki, ci, bi
        q_u[i], q_v[i], q_z[i] = stage_weights(p, dt, i, n)
        v_prev = v_seq[i]
    return StageBlocks(k=k, c=c, b=b, q_u=q_u, q_v=q_v, q_z=q_z)


class KktLayout:
    """Index map of the time-clustered ordering.

    ``rows(kind)`` returns an (N, width) integer array whose row t-1 holds
    the global indices of variable ``kind`` at time index t.
    """

    def __init__(self, n_steps: int, n_u: int, n_z: int):
        self.n_steps = n_steps
        self.n_u = n_u
        self.n_z = n_z
        self.first_size = 2 * n_u + n_z
        self.interior_size = 4 * n_u + n_z
        self.last_size = 2 * n_u
        self.dim = n_steps * (4 * n_u + n_z)
        self._rows = {}
        n, nu, nz = n_steps, n_u, n_z
        starts = np.empty(n + 1, dtype=np.intp)
        starts[0] = 0
        starts[1:] = self.first_size + np.arange(n) * self.interior_size
        self.block_starts = starts

        def seg(offsets, width):
            return offsets[:, None] + np.arange(width)[None, :]

        t = np.arange(1, n + 1)
        u_off = np.where(t == 1, 0, starts[t - 1] + nu)
        z_off = np.where(t == 1, nu, starts[t - 1] + 2 * nu)
        lam_off = np.where(t == 1, nu + nz, starts[t - 1] + 3 * nu + nz)
        v_off = starts[t]
        mu_off = np.where(t == n, starts[t] + nu, starts[t] + 2 * nu + nz)
        self._rows["u"] = seg(u_off, nu)
        self._rows["v"] = seg(v_off, nu)
        self._rows["z"] = seg(z_off, nz)
        self._rows["lam"] = seg(lam_off, nu)
        self._rows["mu"] = seg(mu_off, nu)

    def rows(self, kind: str) -> np.ndarray:
        return self._rows[kind]

    def offset(self, kind: str, t: int) -> int:
        """Global offset of variable ``kind`` at time index t (1-based)."""
        return int(self._rows[kind][t - 1, 0])

    def block_size(self, i: int) -> int:
        if i == 0:
            return self.first_size
        if i == self.n_steps:
            return self.last_size
        return self.interior_size

    def pack(self, u, v, z, lam, mu) -> np.ndarray:
        out = np.empty(self.dim)
        out[self._rows["u"]] = u
        out[self._rows["v"]] = v
        out[self._rows["z"]] = z
        out[self._rows["lam"]] = lam
        out[self._rows["mu"]] = mu
        return out

    def unpack(self, x: np.ndarray):
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"vector shape {x.shape} != ({self.dim},)")
        return (x[self._rows["u"]], x[self._rows["v"]], x[self._rows["z"]],
                x[self._rows["lam"]], x[self._rows["mu"]])


@dataclass
class BlockTriKKT:
    """The reordered augmented system: symmetric block-tridiagonal operator."""

    n_steps: int
    n_u: int
    n_z: int
    diag_first: np.ndarray            # (2nu+nz, 2nu+nz)
    diag_interior: np.ndarray         # (N-1, 4nu+nz, 4nu+nz)
    diag_last: np.ndarray             # (2nu, 2nu)
    layout: KktLayout = field(repr=False, default=None)

    def __post_init__(self):
        if self.layout is None:
            self.layout = KktLayout(self.n_steps, self.n_u, self.n_z)

    @property
    def dim(self) -> int:
        return self.layout.dim

    def diag_block(self, i: int) -> np.ndarray:
        if i == 0:
            return self.diag_first
        if i == self.n_steps:
            return self.diag_last
        return self.diag_interior[i - 1]

    def _coupling_offsets(self, i: int):
        """Row/col local offsets of the +I lower coupling of block i (1..N)."""
        lay = self.layout
        row = lay.n_u if i == self.n_steps else 2 * lay.n_u + lay.n_z
        col = 0 if i == 1 else lay.n_u
        return row, col

    def apply(self, x: np.ndarray) -> np.ndarray:
        """y = A x, blockwise: y_i = L_i x_{i-1} + D_i x_i + U_i x_{i+1}."""
        lay = self.layout
        if x.shape != (lay.dim,):
            raise DimensionMismatch(f"vector shape {x.shape} != ({lay.dim},)")
        y = np.empty(lay.dim)
        n = self.n_steps
        f = lay.first_size
        y[:f] = self.diag_first @ x[:f]
        if n > 1:
            m = lay.interior_size
            xi = x[f:f + (n - 1) * m].reshape(n - 1, m, 1)
            y[f:f + (n - 1) * m] = np.matmul(self.diag_interior, xi).reshape(-1)
        y[-lay.last_size:] = self.diag_last @ x[-lay.last_size:]
        # continuity couplings: mu_t rows pick up u_t, and symmetrically
        mu_rows = lay.rows("mu")
        u_rows = lay.rows("u")
        y[mu_rows] += x[u_rows]
        y[u_rows] += x[mu_rows]
        return y

    def as_operator(self) -> LinearOperator:
        return LinearOperator(dim=self.dim, apply=self.apply)

    def lower_block(self, i: int) -> np.ndarray:
        """Dense materialization of L_i (coupling block row i to row i-1)."""
        if not 1 <= i <= self.n_steps:
            raise IndexError(f"lower block index {i} out of range")
        lay = self.layout
        out = np.zeros((lay.block_size(i), lay.block_size(i - 1)))
        row, col = self._coupling_offsets(i)
        out[row:row + lay.n_u, col:col + lay.n_u] = np.eye(lay.n_u)
        return out

    def materialize(self) -> np.ndarray:
        """Dense matrix of the full operator; intended for small N oracles."""
        lay = self.layout
        a = np.zeros((lay.dim, lay.dim))
        for i in range(self.n_steps + 1):
            s = lay.block_starts[i]
            w = lay.block_size(i)
            a[s:s + w, s:s + w] = self.diag_block(i)
        for i in range(1, self.n_steps + 1):
            lb = self.lower_block(i)
            s = lay.block_starts[i]
            sp = lay.block_starts[i - 1]
            a[s:s + lb.shape[0], sp:sp + lb.shape[1]] = lb
            a[sp:sp + lb.shape[1], s:s + lb.shape[0]] = lb.T
        return a


def assemble_kkt(s: StageBlocks, nu: Optional[int] = None,
                 nz: Optional[int] = None) -> BlockTriKKT:
    """Assemble the block-tridiagonal augmented system from stage blocks."""
    nu = s.n_u if nu is None else nu
    nz = s.n_z if nz is None else nz
    if (nu, nz) != (s.n_u, s.n_z):
        raise DimensionMismatch("stage blocks do not match the stated dimensions")
    n = s.n_steps
    eye = np.eye(nu)

    first = np.zeros((2 * nu + nz, 2 * nu + nz))
    first[:nu, :nu] = s.q_u[0]
    first[nu:nu + nz, nu:nu + nz] = s.q_z[0]
    first[:nu, nu + nz:] = s.k[0].T
    first[nu:nu + nz, nu + nz:] = s.b[0].T
    first[nu + nz:, :nu] = s.k[0]
    first[nu + nz:, nu:nu + nz] = s.b[0]

    m = 4 * nu + nz
    interior = np.zeros((max(n - 1, 0), m, m))
    if n > 1:
        i_v, i_u, i_z = 0, nu, 2 * nu
        i_mu, i_lam = 2 * nu + nz, 3 * nu + nz
        interior[:, i_v:i_v + nu, i_v:i_v + nu] = s.q_v[:-1]
        interior[:, i_u:i_u + nu, i_u:i_u + nu] = s.q_u[1:]
        interior[:, i_z:i_z + nz, i_z:i_z + nz] = s.q_z[1:]
        interior[:, i_v:i_v + nu, i_mu:i_mu + nu] = -eye
        interior[:, i_mu:i_mu + nu, i_v:i_v + nu] = -eye
        interior[:, i_v:i_v + nu, i_lam:] = np.transpose(s.c[1:], (0, 2, 1))
        interior[:, i_u:i_u + nu, i_lam:] = np.transpose(s.k[1:], (0, 2, 1))
        interior[:, i_z:i_z + nz, i_lam:] = np.transpose(s.b[1:], (0, 2, 1))
        interior[:, i_lam:, i_v:i_v + nu] = s.c[1:]
        interior[:, i_lam:, i_u:i_u + nu] = s.k[1:]
        interior[:, i_lam:, i_z:i_z + nz] = s.b[1:]

    last = np.zeros((2 * nu, 2 * nu))
    last[:nu, :nu] = s.q_v[-1]
    last[:nu, nu:] = -eye
    last[nu:, :nu] = -eye

    return BlockTriKKT(n_steps=n, n_u=nu, n_z=nz, diag_first=first,
                       diag_interior=interior, diag_last=last)


def factor_diagonal(a: BlockTriKKT, pivot_floor: float = linalg.PIVOT_FLOOR):
    """Pivoted LU factors of every diagonal block.

    Raises :class:`SingularBlock` with the offending block index when a
    block violates the nonsingularity hypotheses.
    """
    factors = []
    for i in range(a.n_steps + 1):
        try:
            factors.append(linalg.lu_factor(a.diag_block(i), pivot_floor))
        except SingularMatrix as exc:
            raise SingularBlock(i, f"diagonal block {i}: {exc}") from exc
    return factors


class DiagonalSolver:
    """Block-diagonal solves backed by explicit per-block inverses.

    The inverses are computed from the same pivoted LU factorizations that
    :func:`factor_diagonal` performs (singularity checks included), then
    applied as batched matrix products so block solves at distinct time
    indices vectorize; results do not depend on scheduling.
    """

    def __init__(self, a: BlockTriKKT, pivot_floor: float = linalg.PIVOT_FLOOR):
        self.layout = a.layout
        self.n_steps = a.n_steps
        self.inv_first = self._invert(a.diag_first, 0, pivot_floor)
        n = a.n_steps
        if n > 1:
            m = a.diag_interior.shape[1]
            self.inv_interior = np.empty_like(a.diag_interior)
            for i in range(n - 1):
                self.inv_interior[i] = self._invert(a.diag_interior[i], i + 1,
                                                    pivot_floor)
        else:
            self.inv_interior = np.empty((0, 0, 0))
        self.inv_last = self._invert(a.diag_last, n, pivot_floor)

    @staticmethod
    def _invert(block, index, pivot_floor):
        try:
            f = linalg.lu_factor(block, pivot_floor)
        except SingularMatrix as exc:
            raise SingularBlock(index, f"diagonal block {index}: {exc}") from exc
        return scipy.linalg.lu_solve((f.lu, f.piv), np.eye(f.n), check_finite=False)

    def solve_block(self, i: int, r: np.ndarray) -> np.ndarray:
        if i == 0:
            return self.inv_first @ r
        if i == self.n_steps:
            return self.inv_last @ r
        return self.inv_interior[i - 1] @ r

    def solve_all(self, r: np.ndarray) -> np.ndarray:
        """x = D^{-1} r over all block rows at once."""
        lay = self.layout
        out = np.empty(lay.dim)
        f = lay.first_size
        out[:f] = self.inv_first @ r[:f]
        n = self.n_steps
        if n > 1:
            m = lay.interior_size
            ri = r[f:f + (n - 1) * m].reshape(n - 1, m, 1)
            out[f:f + (n - 1) * m] = np.matmul(self.inv_interior, ri).reshape(-1)
        out[-lay.last_size:] = self.inv_last @ r[-lay.last_size:]
        return out


def split_parts(a: BlockTriKKT):
    """Operator views (D, L, U) of the splitting A = D - L - U.

    L and U are the *negated* strictly-lower/upper block parts, matching
    the sign convention of the fixed-point schemes built on them.
    """
    lay = a.layout

    def apply_d(x):
        y = np.empty(lay.dim)
        f = lay.first_size
        y[:f] = a.diag_first @ x[:f]
        n = a.n_steps
        if n > 1:
            m = lay.interior_size
            xi = x[f:f + (n - 1) * m].reshape(n - 1, m, 1)
            y[f:f + (n - 1) * m] = np.matmul(a.diag_interior, xi).reshape(-1)
        y[-lay.last_size:] = a.diag_last @ x[-lay.last_size:]
        return y

    def apply_lower_neg(x):
        y = np.zeros(lay.dim)
        y[lay.rows("mu")] = -x[lay.rows("u")]
        return y

    def apply_upper_neg(x):
        y = np.zeros(lay.dim)
        y[lay.rows("u")] = -x[lay.rows("mu")]
        return y

    d = LinearOperator(dim=lay.dim, apply=apply_d)
    low = LinearOperator(dim=lay.dim, apply=apply_lower_neg)
    up = LinearOperator(dim=lay.dim, apply=apply_upper_neg)
    return d, low, up


def _clustered_rows(n: int, nu: int, nz: int):
    """Index arrays of the variable-clustered ordering
    (u/v interleaved, then z, then lam/mu interleaved)."""
    t = np.arange(n)
    rows = {}
    rows["u"] = (t * 2 * nu)[:, None] + np.arange(nu)[None, :]
    rows["v"] = (t * 2 * nu + nu)[:, None] + np.arange(nu)[None, :]
    rows["z"] = (2 * n * nu + t * nz)[:, None] + np.arange(nz)[None, :]
    base = 2 * n * nu + n * nz
    rows["lam"] = (base + t * 2 * nu)[:, None] + np.arange(nu)[None, :]
    rows["mu"] = (base + t * 2 * nu + nu)[:, None] + np.arange(nu)[None, :]
    return rows


def clustered_permutation(nu: int, nz: int, n: int) -> np.ndarray:
    """Permutation ``perm`` with ``x_ordered = x_clustered[perm]``."""
    lay = KktLayout(n, nu, nz)
    clus = _clustered_rows(n, nu, nz)
    perm = np.empty(lay.dim, dtype=np.intp)
    for kind in KINDS:
        perm[lay.rows(kind).reshape(-1)] = clus[kind].reshape(-1)
    return perm


def from_clustered(x_clustered: np.ndarray, nu: int, nz: int, n: int) -> np.ndarray:
    """Reorder a variable-clustered vector into the time-clustered ordering."""
    x_clustered = np.asarray(x_clustered)
    dim = n * (4 * nu + nz)
    if x_clustered.shape != (dim,):
        raise DimensionMismatch(f"vector shape {x_clustered.shape} != ({dim},)")
    return x_clustered[clustered_permutation(nu, nz, n)]


def to_clustered(x_ordered: np.ndarray, nu: int, nz: int, n: int) -> np.ndarray:
    """Inverse of :func:`from_clustered`."""
    x_ordered = np.asarray(x_ordered)
    dim = n * (4 * nu + nz)
    if x_ordered.shape != (dim,):
        raise DimensionMismatch(f"vector shape {x_ordered.shape} != ({dim},)")
    perm = clustered_permutation(nu, nz, n)
    out = np.empty_like(x_ordered)
    out[perm] = x_ordered
    return out


def assemble_rhs(s: StageBlocks, b1, b1v, b2, b3, b4) -> np.ndarray:
    """Right-hand side in the time-clustered ordering.

    Target data (b1, b1v, b2) enters Q-weighted on the primal rows;
    constraint residuals b3 (dynamics) and b4 (continuity) fill the
    multiplier rows.
    """
    n, nu, nz = s.n_steps, s.n_u, s.n_z
    lay = KktLayout(n, nu, nz)
    b1 = np.asarray(b1, dtype=np.float64).reshape(n, nu)
    b1v = np.asarray(b1v, dtype=np.float64).reshape(n, nu)
    b2 = np.asarray(b2, dtype=np.float64).reshape(n, nz)
    b3 = np.asarray(b3, dtype=np.float64).reshape(n, nu)
    b4 = np.asarray(b4, dtype=np.float64).reshape(n, nu)
    rhs = np.empty(lay.dim)
    rhs[lay.rows("u")] = np.matmul(s.q_u, b1[:, :, None])[:, :, 0]
    rhs[lay.rows("v")] = np.matmul(s.q_v, b1v[:, :, None])[:, :, 0]
    rhs[lay.rows("z")] = np.matmul(s.q_z, b2[:, :, None])[:, :, 0]
    rhs[lay.rows("lam")] = b3
    rhs[lay.rows("mu")] = b4
    return rhs


@dataclass
class Theorem1Report:
    """Per-condition, per-index verification of the diagonal-block
    nonsingularity hypotheses: Q blocks SPD, K blocks nonsingular."""

    q_u_ok: np.ndarray
    q_v_ok: np.ndarray
    q_z_ok: np.ndarray
    k_ok: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(self.q_u_ok.all() and self.q_v_ok.all()
                    and self.q_z_ok.all() and self.k_ok.all())

    def failures(self):
        out = []
        for name, arr in (("q_u", self.q_u_ok), ("q_v", self.q_v_ok),
                          ("q_z", self.q_z_ok), ("k", self.k_ok)):
            for i in np.nonzero(~arr)[0]:
                out.append((name, int(i)))
        return out


def _is_spd(m: np.ndarray) -> bool:
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(m).max())):
        return False
    try:
        scipy.linalg.cholesky(m, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError:
        return False
    return True


def check_theorem1(s: StageBlocks) -> Theorem1Report:
    """Report-only verification of the nonsingularity hypotheses."""
    n = s.n_steps
    q_u_ok = np.array([_is_spd(s.q_u[i]) for i in range(n)])
    q_v_ok = np.array([_is_spd(s.q_v[i]) for i in range(n)])
    q_z_ok = np.array([_is_spd(s.q_z[i]) for i in range(n)])
    k_ok = np.empty(n, dtype=bool)
    for i in range(n):
        try:
            linalg.lu_factor(s.k[i])
            k_ok[i] = True
        except SingularMatrix:
            k_ok[i] = False
    return Theorem1Report(q_u_ok=q_u_ok, q_v_ok=q_v_ok, q_z_ok=q_z_ok, k_ok=k_ok)


def dump_matrix_market(a: BlockTriKKT, path: str) -> None:
    """Plain-text dump of the dense materialization (small N debugging).

    Format: ``%%MatrixMarket matrix coordinate real general`` header, a
    size line ``rows cols nnz``, then 1-based ``i j value`` entries.
    """
    dense = a.materialize()
    rows, cols = np.nonzero(dense)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"% block-tridiagonal augmented system, N={a.n_steps} "
                 f"n_u={a.n_u} n_z={a.n_z}\n")
        fh.write(f"{dense.shape[0]} {dense.shape[1]} {rows.size}\n")
        for r, c in zip(rows, cols):
            fh.write(f"{r + 1} {c + 1} {dense[r, c]:.17g}\n")
