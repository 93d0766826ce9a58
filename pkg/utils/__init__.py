from .logger import logger, setup_logger
from .errors import (
    OWDError,
    EmptyMask,
    ShapeMismatch,
    NonFinite,
    PlacementFailure,
    SchemaError,
    DegenerateInput,
)
