"""Exception hierarchy.

Every error carries a ``category`` used by the command-line front end to pick
an exit code: 2 config, 3 data, 4 estimation, 5 internal.
"""


class NonProbError(Exception):
    category = "internal"
    exit_code = 5


class ConfigError(NonProbError, ValueError):
    category = "config"
    exit_code = 2


class DataError(NonProbError, ValueError):
    category = "data"
    exit_code = 3


class ParseError(DataError):
    """Input file violates its schema; ``line`` is 1-based and counts the header."""

    def __init__(self, path, line, message, column=None):
        self.path, self.line, self.column = str(path), line, column
        where = f"{self.path}:{line}" + (f" column {column!r}" if column else "")
        super().__init__(f"{where}: {message}")


class FrameError(DataError):
    """A probability sample overlaps the non-probability sample it must avoid."""


class DesignError(DataError):
    """Sampling design cannot be realised or is not supported."""


class EstimationError(NonProbError, ArithmeticError):
    category = "estimation"
    exit_code = 4


class EmptyCellError(EstimationError):
    def __init__(self, cells, message=None):
        self.cells = list(cells)
        super().__init__(message or f"empty B-sample cell(s): {self.cells}")


class ImpossibleSampleError(EstimationError):
    pass


class RankDeficiencyError(EstimationError):
    def __init__(self, dependent, message=None):
        self.dependent = list(dependent)
        super().__init__(
            message or f"calibration system is rank deficient; dependent components: {self.dependent}"
        )


class PropensityFitError(EstimationError):
    def __init__(self, message, score_trace=()):
        self.score_trace = list(score_trace)
        super().__init__(message)


class InvalidPropensityError(EstimationError):
    pass


class NoDonorError(EstimationError):
    pass


class DegenerateError(EstimationError):
    """Zero variance or 0/0 where a ratio is required."""
