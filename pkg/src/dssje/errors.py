"""Exception types raised across the package."""


class DssjeError(Exception):
    """Base class for all package errors."""


class ShapeError(DssjeError, ValueError):
    pass


class DegenerateInputError(DssjeError, ValueError):
    pass


class EmptySequenceError(DssjeError, ValueError):
    pass


class ContractError(DssjeError, RuntimeError):
    """An operation was called outside its precondition."""


class ConfigError(DssjeError, ValueError):
    pass


class DatasetError(DssjeError, ValueError):
    """Raised when a dataset on disk or in memory violates an invariant."""


class EmptyCaptionError(DssjeError, ValueError):
    pass


class UnsupportedEncoderError(DssjeError, ValueError):
    pass


class NonFiniteLossError(DssjeError, FloatingPointError):
    pass
