"""Minimal reverse-mode autodiff, Adam, and finite-difference checking."""
from . import ops
from .check import CheckResult, check_primitives, finite_difference_check
from .engine import RULES, Tape, Tensor, backward, checked_mode, constant, tensor
from .ops import softmax_cross_entropy
from .optim import AdamState, adam_step, clip_grad_norm

__all__ = [
    "ops",
    "RULES",
    "Tape",
    "Tensor",
    "backward",
    "checked_mode",
    "constant",
    "tensor",
    "softmax_cross_entropy",
    "AdamState",
    "adam_step",
    "clip_grad_norm",
    "CheckResult",
    "check_primitives",
    "finite_difference_check",
]
