"""
Minimal dense tensor kernel with tape-based reverse-mode differentiation.
"""
from .tensor import Tape, Tensor, active_tape, as_tensor
from . import ops
from .optim import AdamState, adam_step, cosine_lr

__all__ = ["Tape", "Tensor", "active_tape", "as_tensor", "ops", "AdamState", "adam_step", "cosine_lr"]
