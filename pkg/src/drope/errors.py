"""Exception types shared across the package."""


class DropeError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgumentError(DropeError, ValueError):
    """An argument is non-finite, out of range, or otherwise unusable."""


class DimensionMismatchError(DropeError, ValueError):
    """Array shapes disagree with the configured dimensions."""


class ConfigurationError(DropeError, ValueError):
    """A variant, split, or run configuration is self-inconsistent."""


class VerificationError(DropeError, AssertionError):
    """A numerical property that must hold was violated."""
