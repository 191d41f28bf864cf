"""Exception types shared across the toolkit."""


class ConedriveError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(ConedriveError, ValueError):
    """Tensor shapes incompatible with an operation's contract."""


class NumericError(ConedriveError, ValueError):
    """Non-finite values where finite ones are required."""


class GraphError(ConedriveError, ValueError):
    """Malformed model graph, or graph execution misuse."""


class CheckpointError(ConedriveError, ValueError):
    """Unreadable or incompatible checkpoint file."""


class DataError(ConedriveError, ValueError):
    """Malformed telemetry, image, or dataset input."""


class DivergenceError(ConedriveError, RuntimeError):
    """Non-finite loss or gradient encountered during training."""
