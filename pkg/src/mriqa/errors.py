"""Exception hierarchy shared by every mriqa module."""


class MRIQAError(Exception):
    """Base class for all library errors."""


class IoError(MRIQAError, OSError):
    """A file could not be read or written."""


class FormatError(MRIQAError, ValueError):
    """A file exists but its contents are not in the expected format."""


class ParseError(FormatError):
    """A manifest or config row could not be parsed."""


class DimensionMismatch(MRIQAError, ValueError):
    pass


class SizeError(MRIQAError, ValueError):
    pass


class RangeError(MRIQAError, ValueError):
    pass


class ConfigError(MRIQAError, ValueError):
    pass


class StateError(MRIQAError, RuntimeError):
    pass


class LengthError(MRIQAError, ValueError):
    pass


class DegenerateError(MRIQAError, ValueError):
    """Correlation is undefined because one input is constant."""
