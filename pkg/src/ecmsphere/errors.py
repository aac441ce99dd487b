"""Exception types shared across the package."""


class EcmSphereError(Exception):
    """Base class for all package errors."""


class InvalidLabelError(EcmSphereError):
    """A label index or name does not exist in the circle configuration."""


class ConfigError(EcmSphereError):
    """A configuration value violates its contract."""


class DimensionError(EcmSphereError):
    """Operand shapes are incompatible."""


class DegenerateNormError(EcmSphereError):
    """A vector with (near-)zero norm reached a normalization step."""


class ContractError(EcmSphereError):
    """An operation was called outside its documented contract."""


class EmptyObjectiveError(EcmSphereError):
    """No anchor in the batch has a positive sample, the loss is undefined."""


class DegenerateGeometryError(EcmSphereError):
    """Negative-pair angle weights sum to zero for some anchor."""


class MissingLabelError(EcmSphereError):
    """A label has no samples where at least one is required."""


class UndefinedCorrelationError(EcmSphereError):
    """A correlation was requested over a zero-variance series."""


class FormatError(EcmSphereError):
    """A serialized file is malformed. Carries the byte offset of the fault."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingDivergedError(EcmSphereError):
    """A non-finite loss or gradient appeared during training.

    Carries the global step index and the last finite parameter set so a
    caller can persist a usable checkpoint.
    """

    def __init__(self, message, step, last_good_params=None):
        super().__init__(f"{message} (step {step})")
        self.step = step
        self.last_good_params = last_good_params
