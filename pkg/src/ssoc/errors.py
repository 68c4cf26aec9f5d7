"""Exception hierarchy shared across the package."""


class SsocError(Exception):
    """Base class for all engine errors."""


class InvalidArgumentError(SsocError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateInputError(SsocError, ValueError):
    """Input is structurally valid but numerically degenerate (zero norm, all-duplicate points)."""


class ShapeError(SsocError, ValueError):
    """Operands have incompatible shapes."""


class GenerationFailedError(SsocError, RuntimeError):
    """Synthetic data generation could not satisfy its constraints within bounded retries."""


class InvalidSplitError(SsocError, ValueError):
    """An open-world split would produce an unusable dataset."""


class FormatError(SsocError, ValueError):
    """A data file does not conform to the on-disk format."""


class NumericalError(SsocError, RuntimeError):
    """NaN or Inf encountered where finite values are required."""
