"""Exception hierarchy shared by all modules."""


class DemandBanditError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DemandBanditError, ValueError):
    """Invalid parameters or configuration."""


class ContractError(DemandBanditError, ValueError):
    """A caller broke a precondition (shape mismatch, off-simplex input...)."""


class LogFileError(DemandBanditError):
    """Base class for bid-log persistence failures."""


class LogIOError(LogFileError, OSError):
    pass


class MalformedLogError(LogFileError):
    pass


class SchemaVersionError(LogFileError):
    pass


class InvariantViolationError(LogFileError):
    """A loaded row breaks an Impression invariant (e.g. cost <= 0)."""


class NumericalError(DemandBanditError, FloatingPointError):
    """A non-finite value appeared mid-experiment."""
