"""Stateful layers wrapping the functional kernels.

Each layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into :attr:`Parameter.grad` during
``backward``. Calling ``backward`` without a preceding ``forward`` raises
:class:`BackwardError`.
"""

from __future__ import annotations

import math

import numpy as np

from . import functional as F
from .tensor import BackwardError, Parameter, ShapeError, as_tensor

LEAKY_SLOPE = 0.3
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Layer:
    """Base class: a differentiable map on ``[B, C, T]`` arrays."""

    def __init__(self):
        self.training = False
        self._cache = None

    def parameters(self) -> list[Parameter]:
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def load_buffers(self, values: dict[str, np.ndarray]) -> None:
        if values:
            raise KeyError(f"{type(self).__name__} has no buffers, got {sorted(values)}")

    def train(self, mode: bool = True) -> None:
        self.training = mode

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _pop_cache(self):
        if self._cache is None:
            raise BackwardError(f"{type(self).__name__}.backward called without a cached forward pass")
        cache, self._cache = self._cache, None
        return cache

    def __call__(self, x):
        return self.forward(x)


class Conv1d(Layer):
    def __init__(self, name: str, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ShapeError(f"kernel length must be odd, got {kernel_size}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        # fan-based uniform init; biases start at zero
        bound = math.sqrt(6.0 / (in_channels * kernel_size + out_channels * kernel_size))
        rng = rng if rng is not None else np.random.default_rng(0)
        w = rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel_size))
        self.weight = Parameter(f"{name}.weight", w.astype(dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_channels, dtype=dtype))
        # the input gradient of the first layer is never consumed during training
        self.needs_input_grad = True

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x):
        x = as_tensor(x)
        y = F.conv1d(x, self.weight.value, self.bias.value)
        self._cache = x
        return y

    def backward(self, dy):
        x = self._pop_cache()
        dx, dw, db = F.conv1d_backward(dy, x, self.weight.value, need_dx=self.needs_input_grad)
        self.weight.grad += dw
        self.bias.grad += db
        if dx is None:
            return np.zeros_like(x)
        return dx


class BatchNorm1d(Layer):
    """Per-channel batch normalization.

    Running statistics start undefined; they are set by the first train-mode
    batch or by :meth:`reset_running_stats`. Inference before either is an
    error. The running variance tracks the unbiased batch variance.
    """

    def __init__(self, name: str, channels: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM,
                 dtype=np.float32):
        super().__init__()
        self.name = name
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean: np.ndarray | None = None
        self.running_var: np.ndarray | None = None

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        if self.running_mean is None:
            return {}
        return {f"{self.name}.running_mean": self.running_mean, f"{self.name}.running_var": self.running_var}

    def load_buffers(self, values):
        self.running_mean = np.array(values[f"{self.name}.running_mean"])
        self.running_var = np.array(values[f"{self.name}.running_var"])

    def reset_running_stats(self) -> None:
        dtype = self.gamma.value.dtype
        self.running_mean = np.zeros(self.channels, dtype=dtype)
        self.running_var = np.ones(self.channels, dtype=dtype)

    def forward(self, x):
        x = as_tensor(x)
        if x.shape[1] != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} channels, got {x.shape[1]}")
        if not self.training:
            if self.running_mean is None:
                raise RuntimeError(f"{self.name}: inference requested before running statistics exist")
            y = F.batchnorm_infer(x, self.gamma.value, self.beta.value,
                                  self.running_mean, self.running_var, self.eps)
            self._cache = ("infer", None)
            return y
        y, mean, var, x_hat, inv_std = F.batchnorm_train(x, self.gamma.value, self.beta.value, self.eps)
        n = x.shape[0] * x.shape[2]
        unbiased = var * (n / (n - 1))
        m = self.momentum
        if self.running_mean is None:
            self.reset_running_stats()
        dtype = self.running_mean.dtype
        self.running_mean = ((1 - m) * self.running_mean + m * mean).astype(dtype)
        self.running_var = ((1 - m) * self.running_var + m * unbiased).astype(dtype)
        self._cache = ("train", (x_hat, inv_std))
        return y

    def backward(self, dy):
        mode, saved = self._pop_cache()
        if mode == "infer":
            scale = self.gamma.value / np.sqrt(self.running_var + self.eps)
            return dy * scale.astype(dy.dtype)[None, :, None]
        x_hat, inv_std = saved
        dx, dgamma, dbeta = F.batchnorm_train_backward(dy, x_hat, inv_std, self.gamma.value)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        return dx


class LeakyReLU(Layer):
    def __init__(self, alpha: float = LEAKY_SLOPE):
        super().__init__()
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"leaky slope must lie in (0, 1), got {alpha}")
        self.alpha = alpha
        # sign pattern of the last forward input; lets gradient checks detect kink crossings
        self.last_mask: np.ndarray | None = None

    def forward(self, x):
        self._cache = x
        self.last_mask = x >= 0
        return F.leaky_relu(x, self.alpha)

    def backward(self, dy):
        return F.leaky_relu_backward(dy, self._pop_cache(), self.alpha)


class Tanh(Layer):
    def forward(self, x):
        y = np.tanh(x)
        self._cache = y
        return y

    def backward(self, dy):
        return F.tanh_backward(dy, self._pop_cache())


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        super().__init__()
        self.layers = list(layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def buffers(self):
        out = {}
        for layer in self.layers:
            out.update(layer.buffers())
        return out

    def load_buffers(self, values):
        for layer in self.layers:
            layer.load_buffers({k: v for k, v in values.items() if _owned_by(layer, k)})

    def train(self, mode: bool = True):
        super().train(mode)
        for layer in self.layers:
            layer.train(mode)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)


def _owned_by(layer: Layer, key: str) -> bool:
    if isinstance(layer, BatchNorm1d):
        return key.startswith(layer.name + ".")
    if isinstance(layer, Sequential):
        return any(_owned_by(sub, key) for sub in layer.layers)
    return False
