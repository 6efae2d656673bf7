"""Exception hierarchy shared by the library and the CLI."""


class GroupLatentError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(GroupLatentError, ValueError):
    """Input violates a documented invariant or precondition."""


class ConfigError(ValidationError):
    pass


class EmptyGroupError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class FormatError(GroupLatentError):
    """A file on disk does not match the expected container layout."""


class NumericError(GroupLatentError, ArithmeticError):
    """Non-finite values appeared during a computation.

    ``where`` carries a short description of the failing location, e.g. a
    layer index or loss term.
    """

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where
