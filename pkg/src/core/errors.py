"""Exception hierarchy shared by all services."""


class CaAmaError(Exception):
    """Base class for every error raised by this package."""
    pass


class InvalidMechanismError(CaAmaError, ValueError):
    """Raised when valuations, allocations or AMA parameters break their invariants."""
    pass


class UnsupportedDistributionError(CaAmaError, ValueError):
    """Raised for distribution kinds/shapes an operation does not support."""
    pass


class GridTooLargeError(CaAmaError, ValueError):
    """Raised when a brute-force search grid exceeds the cell guard."""
    pass


class StorageError(CaAmaError):
    """Raised when a dataset or checkpoint file cannot be parsed."""
    pass


class TrainingAbortedError(CaAmaError):
    """Raised when training produces a non-finite loss."""

    def __init__(self, iteration: int, stage: str, message: str):
        self.iteration = iteration
        self.stage = stage
        super().__init__(f"Training aborted at iteration {iteration} ({stage}): {message}")
