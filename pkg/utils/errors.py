"""Exception types shared across the toolkit."""
from typing import Optional


class OWDError(Exception):
    """Base class for all toolkit errors."""


class EmptyMask(OWDError):
    """A mask with no nonzero cells was given where a box is required."""


class ShapeMismatch(OWDError):
    """An array does not have the dimensions an operation requires."""


class NonFinite(OWDError):
    """A loss term evaluated to NaN or Inf."""

    def __init__(self, term: str, value: Optional[float] = None):
        self.term = term
        self.value = value
        super().__init__(f"Non-finite value in loss term '{term}': {value}")


class PlacementFailure(OWDError):
    """Objects could not be placed under the scene's overlap cap."""


class SchemaError(OWDError):
    """A dataset, config, or manifest file is malformed."""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DegenerateInput(OWDError):
    """Inputs are too uniform or too few for a meaningful result."""
