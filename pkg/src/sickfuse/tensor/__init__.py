"""Numeric substrate: tensors, autodiff, layer primitives, Adam."""

from .tensor import Parameter, Tape, Tensor, backward, current_tape
from .adam import AdamState, adam_step
from .gradcheck import finite_difference_gradient, max_relative_error
from . import ops

__all__ = [
    "Tensor", "Parameter", "Tape", "backward", "current_tape",
    "AdamState", "adam_step",
    "finite_difference_gradient", "max_relative_error",
    "ops",
]
