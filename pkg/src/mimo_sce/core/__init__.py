"""Signal tensors, differentiable primitives and gradient verification."""

from .layers import BatchNorm1d, Conv1d, Layer, LeakyReLU, Sequential, Tanh
from .tensor import BackwardError, Parameter, ShapeError, as_tensor, resolve_dtype

__all__ = [
    "BackwardError",
    "BatchNorm1d",
    "Conv1d",
    "Layer",
    "LeakyReLU",
    "Parameter",
    "Sequential",
    "ShapeError",
    "Tanh",
    "as_tensor",
    "resolve_dtype",
]
