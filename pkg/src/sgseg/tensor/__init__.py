"""Minimal channels-last tensor library with reverse-mode autodiff."""

from . import kernels, ops
from .engine import (
    CompGraph,
    GraphConsumedError,
    Tensor,
    as_tensor,
    backward,
    is_grad_enabled,
    no_grad,
)
from .gradcheck import gradcheck, numeric_grad, relative_error

__all__ = [
    "CompGraph",
    "GraphConsumedError",
    "Tensor",
    "as_tensor",
    "backward",
    "gradcheck",
    "is_grad_enabled",
    "kernels",
    "no_grad",
    "numeric_grad",
    "ops",
    "relative_error",
]
