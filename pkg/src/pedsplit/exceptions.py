"""Exception hierarchy.

Every error raised on purpose by the toolkit derives from :class:`PedsplitError`,
which lets the command line map domain problems onto exit codes.
"""

from __future__ import annotations


class PedsplitError(Exception):
    """Base class for toolkit errors."""


class ValidationError(PedsplitError, ValueError):
    """Input violates a documented structural contract."""


class EmptySubset(ValidationError):
    pass


class AllAttributesPruned(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class ParseError(ValidationError):
    """A file could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class SchemaMismatch(ParseError):
    pass


class ChecksumMismatch(ValidationError):
    pass


class ProbabilityOutOfRange(ValidationError):
    pass


class OverlappingSplit(ValidationError):
    def __init__(self, message: str, image_ids=()):
        super().__init__(message)
        self.image_ids = tuple(image_ids)


class InsufficientIdentities(ValidationError):
    pass


class DegenerateAttribute(ValidationError):
    def __init__(self, message: str, attributes=()):
        super().__init__(message)
        self.attributes = tuple(attributes)


class DegenerateRatio(ValidationError):
    pass


class SearchExhausted(PedsplitError):
    """No trial satisfied every criterion within ``max_trials``.

    ``best`` holds the split with minimal total normalized slack and
    ``report`` its criteria report.
    """

    def __init__(self, max_trials: int, best=None, report=None):
        super().__init__(f"no split satisfied all criteria within {max_trials} trials")
        self.max_trials = max_trials
        self.best = best
        self.report = report
