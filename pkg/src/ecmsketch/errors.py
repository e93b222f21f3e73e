class EcmError(Exception):
    """Base class for all errors raised by ecmsketch."""


class OrderingError(EcmError, ValueError):
    """A timestamp older than the last recorded arrival was inserted."""


class RangeError(EcmError, ValueError):
    """Query range is not within (0, window]."""


class CapacityError(EcmError):
    """More arrivals in the window than the structure was sized for."""


class UnsupportedMergeError(EcmError):
    """Order-preserving merge is impossible for these inputs (count-based windows)."""


class IncompatibleError(EcmError, ValueError):
    """Sketches or synopses differ in configuration, dimensions or hash seeds."""


class DomainError(EcmError, ValueError):
    """Key outside the configured universe."""


class FormatError(EcmError, ValueError):
    """Malformed serialized frame or input file."""
