"""Exception hierarchy shared by all condlab modules."""


class CondlabError(Exception):
    """Base class for library errors."""


class InvalidArgument(CondlabError, ValueError):
    pass


class GridMismatch(InvalidArgument):
    pass


class DomainViolation(CondlabError, ValueError):
    """A density's marginal falls below the declared lower bound."""

    def __init__(self, message, y_index=None, marginal=None):
        super().__init__(message)
        self.y_index = y_index
        self.marginal = marginal


class OutOfDomain(CondlabError, ValueError):
    pass


class DegenerateQuery(CondlabError, ValueError):
    pass


class DegenerateSample(CondlabError, ValueError):
    pass


class NonFiniteError(CondlabError, FloatingPointError):
    """Raised by the autodiff engine when a layer produces inf/nan."""

    def __init__(self, message, layer_index=None):
        super().__init__(message)
        self.layer_index = layer_index


class FormatError(CondlabError, IOError):
    """Corrupt, truncated or mismatched binary file."""
