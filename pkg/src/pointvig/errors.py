"""Exception types shared across the package."""


class PointVigError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PointVigError):
    """Tensor shapes are incompatible for the requested operation."""


class EmptyInputError(PointVigError):
    """An operation received an empty tensor or point set."""


class DegenerateBatchError(PointVigError):
    """Batch statistics were requested on a batch that is too small."""


class CapacityError(PointVigError):
    """A neighbor count or sample count exceeds what the input can supply."""


class EmptyBallError(PointVigError):
    """A ball query center has no points in radius and is not part of the cloud."""


class NumericError(PointVigError):
    """Non-finite values were encountered where finite ones are required."""


class IncompleteBackwardError(PointVigError):
    """An optimizer step was attempted before gradients were populated."""


class ConfigError(PointVigError):
    """A configuration document or model spec failed validation."""


class CheckpointError(PointVigError):
    """A checkpoint or tensor container is malformed."""


class ParseError(PointVigError):
    """A text input file could not be parsed."""
