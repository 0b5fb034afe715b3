"""Exception hierarchy shared across the package.

``ValidationError`` subclasses signal bad inputs or configuration and map to
CLI exit code 2; anything else escaping to the CLI is an internal error
(exit code 1).
"""


class ScmediateError(Exception):
    """Base class for all package errors."""


class ValidationError(ScmediateError):
    """Invalid input data, file, or configuration."""


class NonFiniteInput(ValidationError):
    """A numeric input contains NaN or infinity."""


class DimensionMismatch(ValidationError):
    """Array shapes or declared file dimensions disagree."""


class RankDeficient(ScmediateError):
    """Design matrix is collinear beyond tolerance."""

    def __init__(self, message: str, columns: list[str] | None = None):
        super().__init__(message)
        self.columns = columns or []


class EmptyPenaltySet(ValidationError):
    """Lasso called with no penalized terms."""


class FoldTooSmall(ValidationError):
    """A cross-validation fold has too few rows to fit the unpenalized terms."""


class ParseError(ValidationError):
    """A text input file could not be parsed."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + loc)
        self.path = path
        self.line = line


class NoSubjectsRemain(ValidationError):
    """Every subject was removed by filtering."""


class NoGenesRemain(ValidationError):
    """Every gene was removed by filtering."""


class DegenerateExposure(ValidationError):
    """Exposure has fewer than two distinct values or too few subjects."""


class OutOfRange(ValidationError):
    """A probability or threshold lies outside its valid range."""


class KeyMismatch(ScmediateError):
    """Outcome and mediator fits do not share gene/pathway keys."""


class IndexMismatch(ValidationError):
    """Report and truth set use inconsistent gene indexing."""


class ConfigInvalid(ValidationError):
    """Simulation or run configuration violates its invariants."""
