"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid parameters or experiment configuration (CLI exit code 2)."""


class CycleRunawayError(RuntimeError):
    """A regeneration cycle exceeded the time cap; estimates would be biased."""


class AuditFailure(RuntimeError):
    """A conservation audit found an internal bookkeeping mismatch (simulator bug)."""


class InsufficientDataError(RuntimeError):
    """Not enough usable tail levels to fit the requested model."""
