"""Exception types shared across the package."""


class StgmError(Exception):
    """Base class for all errors raised by this package."""


class NotationError(StgmError):
    """A structural-model text line could not be parsed or validated."""


class SingularModelError(StgmError):
    """A structural matrix that must be invertible is singular."""


class RankDeficientError(StgmError):
    """A full-rank operation was requested on a rank-deficient model."""


class NotPositiveDefiniteError(StgmError):
    """A matrix that must be symmetric positive definite is not."""


class DomainError(StgmError):
    """A spatial domain file or query is invalid."""


class DesignError(StgmError):
    """A formula, data table, or smoother specification is invalid."""


class FamilyError(StgmError):
    """An unsupported family/link pair or invalid response was given."""


class ConfigError(StgmError):
    """A run configuration file is malformed or inconsistent."""


class FitError(StgmError):
    """Estimation failed in a way that cannot be recovered from."""
