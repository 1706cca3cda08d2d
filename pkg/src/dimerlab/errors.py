"""Exception hierarchy shared by all dimerlab modules.

The CLI maps these onto exit codes: ConfigError -> 1, SolverError -> 2,
ValidityError -> 3.
"""


class DimerlabError(Exception):
    """Base class for all dimerlab errors."""


class ConfigError(DimerlabError):
    """Bad construction parameters or configuration input."""


class SolverError(DimerlabError):
    """An iterative or dense solver failed to deliver its contract."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class ValidityError(DimerlabError):
    """A physical validity condition failed (gap, support, neutral split).

    Not a crash: the inputs were well-formed but outside the regime where
    the requested quantity is defined.
    """
