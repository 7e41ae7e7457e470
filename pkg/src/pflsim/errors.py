"""Exception hierarchy shared by all modules."""


class PflsimError(Exception):
    """Base class for every error raised by the package."""


class FormatError(PflsimError, ValueError):
    """Malformed input file (ragged rows, missing blocks)."""


class ParseError(PflsimError, ValueError):
    """A cell could not be parsed as a number."""


class DimensionError(PflsimError, ValueError):
    """Array shapes or grids do not line up."""


class ExtrapolationError(PflsimError, ValueError):
    """Interpolation target lies outside the source grid."""


class PreconditionError(PflsimError, ValueError):
    """An input violates a documented precondition."""


class ConfigurationError(PflsimError, ValueError):
    """Invalid tuning or configuration value."""


class DegenerateIndexError(PflsimError, ValueError):
    """The single-index values have zero range."""


class RankError(PflsimError, ArithmeticError):
    """A linear system is singular or an eigenvalue is non-positive."""


class HarnessError(PflsimError, RuntimeError):
    """Too many Monte Carlo replications failed."""
