class LabError(Exception):
    """Base class for every error raised by the lab."""


class DomainError(LabError, ValueError):
    """A parameter lies outside its admissible range."""


class SingularityError(DomainError):
    """The kernel was evaluated at r <= 0."""


class DivergenceError(DomainError):
    """An integral or trace requested below its integrability threshold."""


class UnsupportedError(LabError):
    """A valid request the lab does not implement (e.g. probe in d = 3)."""


class EmptyDomainError(LabError):
    """Rasterization selected no cell."""


class CapacityError(LabError):
    """A dense allocation would exceed the configured size guard."""


class DataError(LabError):
    """Numerical input is malformed (non-finite entries, wrong shapes)."""


class UsageError(LabError):
    """An operation was called without the data it requires."""


class ConfigError(LabError):
    """An experiment file or CLI override is inconsistent."""
