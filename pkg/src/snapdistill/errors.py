"""Exception types shared across the package."""


class SnapDistillError(Exception):
    pass


class ConfigError(SnapDistillError, ValueError):
    """Invalid hyperparameter, schedule or run configuration."""


class ContractError(SnapDistillError, ValueError):
    """A caller violated an operation's precondition (shape, range, arity)."""


class NumericError(SnapDistillError, FloatingPointError):
    """A NaN or Inf showed up where finite values are required."""

    def __init__(self, message, node_id=None, op=None, record=None):
        super().__init__(message)
        self.node_id = node_id
        self.op = op
        self.record = record or {}


class FormatError(SnapDistillError, ValueError):
    """A binary file does not match its documented layout."""

    def __init__(self, message, offset=None, path=None):
        super().__init__(message)
        self.offset = offset
        self.path = path


class VersionError(FormatError):
    pass
