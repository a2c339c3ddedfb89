"""Exception types shared across the package."""


class SpinesegError(Exception):
    """Base class for all package errors."""


class ShapeError(SpinesegError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(SpinesegError):
    """A value lies outside the mathematical domain of an operation."""


class UsageError(SpinesegError):
    """An API was called in an unsupported way."""


class ConfigError(SpinesegError):
    """A configuration violates a documented constraint."""


class DataError(SpinesegError):
    """Input data violates a documented invariant (e.g. label out of range)."""


class GenerationError(SpinesegError):
    """A synthetic sample could not be generated under the requested geometry."""


class FormatError(SpinesegError):
    """A file does not conform to the expected on-disk format."""


class CorruptFileError(FormatError):
    """A file parses but its payload is inconsistent with its header."""


class ManifestError(FormatError):
    """A checkpoint manifest is missing or inconsistent with the network."""


class VersionError(FormatError):
    """A checkpoint was written by an incompatible format version."""
