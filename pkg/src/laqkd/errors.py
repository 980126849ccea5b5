"""Shared exception types."""


class LaqkdError(Exception):
    """Base class for all errors raised by this package."""


class NormalizationError(LaqkdError, ValueError):
    """A state vector is not normalized (or is malformed)."""


class NonUnitaryError(LaqkdError, ValueError):
    """A matrix handed to a gate slot is not unitary."""


class ConfigError(LaqkdError, ValueError):
    """A run or command configuration is invalid."""


class KeyDepletedError(LaqkdError, RuntimeError):
    """A backup key pool has no bits left to replenish from."""


class ScheduleCycleError(LaqkdError, ValueError):
    """A transmission schedule contains a dependency cycle."""


class ProbeConditionError(LaqkdError, ValueError):
    """A probe fails the undetectability conditions required by an experiment."""


class MalformedPayloadError(LaqkdError, ValueError):
    """A channel payload has the wrong shape, dtype or normalization."""
