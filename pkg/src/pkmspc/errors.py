"""Exception hierarchy shared across the package."""


class PkmspcError(Exception):
    """Base class for all package errors."""


class InputError(PkmspcError, ValueError):
    """Invalid shapes, values or configuration supplied by the caller."""


class IngestionError(InputError):
    """A data file could not be parsed into a dataset."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class NumericalError(PkmspcError, ArithmeticError):
    """A factorization or linear solve failed."""

    def __init__(self, message, jitters=()):
        super().__init__(message)
        self.jitters = tuple(jitters)


class DegenerateModelError(PkmspcError):
    """The centered Gram matrix carries no usable variance."""


class TuningError(PkmspcError):
    """An unsupervised tuning rule produced only degenerate criteria."""

    def __init__(self, method, message):
        super().__init__(f"{method}: {message}")
        self.method = method


class PropagationError(PkmspcError):
    """Too many posterior draws produced degenerate monitoring models."""


class UndefinedRateError(InputError):
    """A rate or score is undefined because a label class is missing."""


class StageError(PkmspcError):
    """A pipeline stage failed; carries the stage name and a partial manifest."""

    def __init__(self, stage, cause, manifest=None):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.manifest = manifest or {}
