"""
Minimal tensor engine: reverse-mode autodiff, MLP layers and Adam
"""

from .nn import MLP, Linear, Module, merge_parameters, mlp_sizes
from .optim import Adam, AdamState, adam_step
from .tensor import (
    GraphError,
    NonFiniteError,
    OpKind,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    forward_op,
    grad,
    parameter,
)

__all__ = [
    "Adam",
    "AdamState",
    "GraphError",
    "Linear",
    "MLP",
    "Module",
    "NonFiniteError",
    "OpKind",
    "ShapeError",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "forward_op",
    "grad",
    "merge_parameters",
    "mlp_sizes",
    "parameter",
]
