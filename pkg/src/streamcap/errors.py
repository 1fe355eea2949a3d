"""Exception types shared across the package."""


class StreamcapError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(StreamcapError, ValueError):
    """An input violates a shape, range or ordering precondition."""


class StateError(StreamcapError, RuntimeError):
    """An operation was applied to a memory state that is not ready for it."""


class DegenerateInstanceError(StreamcapError, ArithmeticError):
    """A numerical check could not be carried out on the given instance."""


class FormatError(StreamcapError, ValueError):
    """A binary or text file does not match its expected layout."""
