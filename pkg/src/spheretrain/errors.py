"""Exception hierarchy shared by every module in the package."""


class SphereTrainError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SphereTrainError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(SphereTrainError):
    """An input lies outside the documented domain of an operation."""


class DegenerateInputError(DomainError):
    """Input is structurally valid but numerically degenerate (zero rows etc.)."""


class NumericError(SphereTrainError):
    """A non-finite value appeared where the contract requires finite numbers."""


class GraphError(SphereTrainError):
    """Misuse of the autodiff graph (non-scalar root, repeated backward, ...)."""


class StateError(SphereTrainError):
    """A stateful component was queried or driven out of contract."""


class ProtocolError(SphereTrainError):
    """A verification protocol is unusable (no impostor pairs, ...)."""


class ConfigError(SphereTrainError):
    """A configuration file or value failed validation."""


class FileFormatError(SphereTrainError):
    """A binary or CSV artifact does not match its documented layout."""
