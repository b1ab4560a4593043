"""Solver toolkit for time-dependent optimal control: virtual-variable
block-tridiagonal KKT assembly, multigrid-in-time preconditioned flexible
Krylov solvers, and a composite-step trust-region SQP driver."""

__version__ = "0.1.0"

from .errors import (Breakdown, ConfigError, DimensionMismatch,
                     IndivisibleSteps, NewtonDivergence, NonFiniteValue,
                     SingularBlock, SingularMatrix, TempoKktError)
from .timedisc import ProblemSpec, TimeGrid, Trajectory, forward_solve
from .problems import (BurgersConfig, HeatNeumannConfig, VanDerPolConfig,
                       build_burgers, build_heat_neumann, build_vanderpol)
from .kkt import BlockTriKKT, StageBlocks, assemble_kkt, build_stage_blocks
from .multigrid import MgHierarchy, build_hierarchy, mg_preconditioner
from .sqp import SolverConfig, SqpConfig, SqpResult, sqp_solve

__all__ = [
    "Breakdown", "ConfigError", "DimensionMismatch", "IndivisibleSteps",
    "NewtonDivergence", "NonFiniteValue", "SingularBlock", "SingularMatrix",
    "TempoKktError",
    "ProblemSpec", "TimeGrid", "Trajectory", "forward_solve",
    "BurgersConfig", "HeatNeumannConfig", "VanDerPolConfig",
    "build_burgers", "build_heat_neumann", "build_vanderpol",
    "BlockTriKKT", "StageBlocks", "assemble_kkt", "build_stage_blocks",
    "MgHierarchy", "build_hierarchy", "mg_preconditioner",
    "SolverConfig", "SqpConfig", "SqpResult", "sqp_solve",
]
