"""Exception types shared across ntklab."""


class NtkLabError(Exception):
    """Base class for all library errors."""


class DimensionError(NtkLabError, ValueError):
    pass


class DatasetError(NtkLabError, ValueError):
    """Raised when a dataset violates the on-sphere / non-parallel assumptions."""


class ParallelPointsError(DatasetError):
    pass


class ZeroVarianceError(DatasetError):
    pass


class DegenerateGramError(NtkLabError, ArithmeticError):
    """A Gram matrix could not be factorized even with the largest jitter."""

    def __init__(self, message, smallest_pivot=None):
        super().__init__(message)
        self.smallest_pivot = smallest_pivot


class DivergenceError(NtkLabError, ArithmeticError):
    """Non-finite loss or weights during training."""

    def __init__(self, message, iteration, trajectory=None):
        super().__init__(message)
        self.iteration = iteration
        self.trajectory = trajectory


class ConfigError(NtkLabError, ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
