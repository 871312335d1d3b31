"""Exception types shared across the package."""


class CompositeGanError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(CompositeGanError, ValueError):
    """Tensor extents or channel counts do not match what an operation requires."""


class RangeError(CompositeGanError, ValueError):
    """Pixel or alpha values fall outside the unit interval."""


class VariantError(CompositeGanError, RuntimeError):
    """An operation was requested that the model variant does not support."""


class CheckpointError(CompositeGanError, RuntimeError):
    """A checkpoint file is malformed or inconsistent with its own metadata."""


class NonFiniteLossError(CompositeGanError, RuntimeError):
    """A training loss became NaN or infinite; carries the offending term's name."""

    def __init__(self, term: str, iteration: int | None = None):
        self.term = term
        self.iteration = iteration
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"non-finite value in loss term '{term}'{where}")
