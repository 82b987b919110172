"""Exception types shared across the package."""


class SgdLabError(Exception):
    """Base class for all sgdlab errors."""


class ContractViolation(SgdLabError):
    """An operation was called with arguments that violate its contract."""


class DomainError(SgdLabError):
    """An objective was evaluated outside its restricted domain.

    Carries the offending point so callers (and the CLI) can report it.
    """

    def __init__(self, message: str, theta=None):
        super().__init__(message)
        self.theta = theta


class UnknownObjectiveError(SgdLabError, KeyError):
    """Catalog lookup for a name that does not exist."""


class ConfigError(SgdLabError):
    """Experiment configuration is malformed or inconsistent."""
