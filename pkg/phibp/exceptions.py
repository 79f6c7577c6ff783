class PhibpError(Exception):
    """Base class for errors raised by the phibp package."""


class DomainError(PhibpError, ValueError):
    """A parameter lies outside the domain of a density or sampler."""


class ConfigurationError(PhibpError, ValueError):
    """A run configuration is inconsistent."""


class AlignmentError(PhibpError, ValueError):
    """Two count matrices cannot be aligned group by group."""


class InsufficientDataError(PhibpError, ValueError):
    """Not enough chains or records to compute a statistic."""


class CountMatrixParseError(PhibpError, ValueError):
    """A delimited count file could not be parsed.

    Args:
        message (str): Description of the problem.
        row (int, optional): 1-based line number in the file.
        column (str, optional): Column label of the offending cell.
    """

    def __init__(self, message, row=None, column=None):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column {column!r}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.row = row
        self.column = column
