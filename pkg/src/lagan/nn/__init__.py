"""Minimal float64 tensor core with the LAGAN layer set."""

from lagan.nn.tensor import StateError, Tensor, no_grad
from lagan.nn.ops import (
    BatchNormState,
    DegenerateBatchError,
    DimensionError,
    valid_extent,
)

__all__ = [
    "BatchNormState",
    "DegenerateBatchError",
    "DimensionError",
    "StateError",
    "Tensor",
    "no_grad",
    "valid_extent",
]
