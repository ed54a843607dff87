"""Exception types shared across the package."""


class SolverFailure(RuntimeError):
    """Exact solver gave up (pivot cap exceeded or too many dropped samples)."""


class NumericalFailure(RuntimeError):
    """A numerical method produced NaN/Inf; carries the iteration it happened at."""

    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class FormatError(ValueError):
    """Malformed input file; carries the byte offset where parsing failed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class CorruptionError(RuntimeError):
    """A stored artifact is truncated or fails its checksum."""


class ConsistencyError(RuntimeError):
    """A stored artifact is internally inconsistent (header vs payload)."""


class DivergenceError(RuntimeError):
    """An iterative method is diverging; typically a step size problem."""
