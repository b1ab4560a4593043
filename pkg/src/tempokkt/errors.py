"""Exception types shared across the toolkit."""


class TempoKktError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(TempoKktError):
    """Operands do not conform."""


class SingularMatrix(TempoKktError):
    """A pivot fell below the singularity floor during LU factorization."""

    def __init__(self, msg, min_pivot=None):
        super().__init__(msg)
        self.min_pivot = min_pivot


class SingularBlock(TempoKktError):
    """A diagonal KKT block could not be factored (nonsingularity
    hypotheses violated)."""

    def __init__(self, block_index, msg=None):
        super().__init__(msg or f"singular diagonal block {block_index}")
        self.block_index = block_index


class NonFiniteValue(TempoKktError):
    """NaN or Inf encountered in a numerical kernel."""


class Breakdown(TempoKktError):
    """Krylov basis breakdown with a nonzero residual."""


class NewtonDivergence(TempoKktError):
    """Per-step Newton solve failed to converge within its iteration cap."""


class IndivisibleSteps(TempoKktError):
    """Time-step count is not divisible by the requested coarsening factor."""


class ConfigError(TempoKktError):
    """Invalid experiment configuration."""
