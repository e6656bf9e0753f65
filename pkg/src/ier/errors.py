"""Exception hierarchy shared by all modules."""


class IerError(Exception):
    pass


class DomainError(IerError, ValueError):
    """An argument violates a mathematical precondition."""


class FormatError(IerError, ValueError):
    """A file on disk does not match its declared format."""


class ConfigurationError(IerError, ValueError):
    """A configuration is internally inconsistent or unattainable."""


class UsageError(IerError):
    """Bad command invocation (missing prerequisite, wrong stage order)."""


class NumericError(IerError, ArithmeticError):
    """A computation produced non-finite or otherwise unusable values."""
