"""Rank-3 signal tensors and learnable parameters.

Activations are plain ``numpy`` arrays of shape ``[batch, channels, time]``.
Only learnable quantities carry a gradient buffer, held by :class:`Parameter`.
"""

from __future__ import annotations

import numpy as np

PRECISIONS = {"float32": np.float32, "float64": np.float64}


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


class BackwardError(RuntimeError):
    """Raised when backward is called without a cached forward pass."""


def resolve_dtype(precision: str | np.dtype | type) -> np.dtype:
    if isinstance(precision, str):
        try:
            return np.dtype(PRECISIONS[precision])
        except KeyError:
            raise ValueError(f"unknown precision {precision!r}") from None
    dtype = np.dtype(precision)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    return dtype


def as_tensor(x, dtype=None) -> np.ndarray:
    """Validate ``x`` as a ``[B, C, T]`` array with every dimension >= 1."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 3:
        raise ShapeError(f"expected rank-3 [batch, channels, time], got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"all dimensions must be >= 1, got shape {arr.shape}")
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Parameter:
    """A named learnable array together with its accumulated gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def astype(self, dtype) -> None:
        """Cast value and gradient in place (used for 64-bit gradient checks)."""
        self.value = self.value.astype(dtype)
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.value.dtype})"
