"""FCN / SFCN autoencoders with an explicit encoder/decoder split."""

from __future__ import annotations

import numpy as np

from ..core.layers import BatchNorm1d, Conv1d, Layer, LeakyReLU, Sequential, Tanh
from ..core.tensor import Parameter, ShapeError, as_tensor, resolve_dtype
from .config import ModelConfig
from .sinc import SincConv


def conv_block(name: str, c_in: int, c_out: int, k: int, rng, dtype) -> Sequential:
    """Conv -> batch normalization -> LeakyReLU."""
    return Sequential([
        Conv1d(f"{name}.conv", c_in, c_out, k, rng=rng, dtype=dtype),
        BatchNorm1d(f"{name}.bn", c_out, dtype=dtype),
        LeakyReLU(),
    ])


class Model(Layer):
    """Autoencoder mapping ``[B, N, T]`` noisy input to ``[B, c, T]`` output.

    The encoder ends at the compression block, whose ``bottleneck``-channel
    output is the latent stream sent from edge to server.
    """

    def __init__(self, config: ModelConfig, encoder: Sequential, decoder: Sequential):
        super().__init__()
        self.config = config
        self.encoder = encoder
        self.decoder = decoder

    def children(self):
        return [self.encoder, self.decoder]

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + self.decoder.parameters()

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def buffers(self):
        out = self.encoder.buffers()
        out.update(self.decoder.buffers())
        return out

    def load_buffers(self, values):
        self.encoder.load_buffers({k: v for k, v in values.items() if k.startswith("encoder.")})
        self.decoder.load_buffers({k: v for k, v in values.items() if k.startswith("decoder.")})

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True):
        super().train(mode)
        self.encoder.train(mode)
        self.decoder.train(mode)

    def eval(self):
        self.train(False)

    @property
    def dtype(self) -> np.dtype:
        return self.encoder.parameters()[0].value.dtype

    def _first_layer(self) -> Layer:
        first = self.encoder.layers[0]
        while isinstance(first, Sequential):
            first = first.layers[0]
        return first

    @property
    def input_grad(self) -> bool:
        return self._first_layer().needs_input_grad

    @input_grad.setter
    def input_grad(self, value: bool) -> None:
        self._first_layer().needs_input_grad = value

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def encode(self, y: np.ndarray) -> np.ndarray:
        y = as_tensor(y, dtype=self.dtype)
        if y.shape[1] != self.config.channels:
            raise ShapeError(f"model expects {self.config.channels} input channels, got {y.shape[1]}")
        return self.encoder.forward(y)

    def decode(self, z: np.ndarray) -> np.ndarray:
        z = as_tensor(z, dtype=self.dtype)
        if z.shape[1] != self.config.bottleneck:
            raise ShapeError(f"decoder expects {self.config.bottleneck} latent channels, got {z.shape[1]}")
        return self.decoder.forward(z)

    def forward(self, y):
        return self.decode(self.encode(y))

    def backward(self, dy):
        return self.encoder.backward(self.decoder.backward(dy))


def build_model(config: ModelConfig, seed: int = 0, precision: str = "float32") -> Model:
    """Construct the layer stack for ``config`` with seeded initialization.

    Running batch-norm statistics are initialized to mean 0 / variance 1 so a
    fresh model can run inference.
    """
    dtype = resolve_dtype(precision)
    rng = np.random.default_rng(seed)
    fn, fl = config.filters, config.filter_length

    enc: list[Layer] = []
    c_in = config.channels
    if config.variant == "SFCN":
        enc.append(Sequential([
            SincConv("encoder.sinc.conv", config.sinc_filters, config.sinc_length, config.sample_rate, dtype=dtype),
            BatchNorm1d("encoder.sinc.bn", config.channels * config.sinc_filters, dtype=dtype),
            LeakyReLU(),
        ]))
        c_in = config.channels * config.sinc_filters
    for i in range(config.blocks):
        enc.append(conv_block(f"encoder.cb{i}", c_in, fn, fl, rng, dtype))
        c_in = fn
    enc.append(conv_block("encoder.cpb", c_in, config.bottleneck, fl, rng, dtype))

    dec: list[Layer] = []
    c_in = config.bottleneck
    for i in range(config.blocks):
        dec.append(conv_block(f"decoder.cb{i}", c_in, fn, fl, rng, dtype))
        c_in = fn
    dec.append(Sequential([Conv1d("decoder.rb.conv", c_in, config.out_channels, fl, rng=rng, dtype=dtype), Tanh()]))

    model = Model(config, Sequential(enc), Sequential(dec))
    for layer in _walk(model):
        if isinstance(layer, BatchNorm1d):
            layer.reset_running_stats()
    # the network input never needs a gradient during training
    model.input_grad = False
    return model


def _walk(layer: Layer):
    stack = [layer]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(getattr(node, "layers", ()))
        if hasattr(node, "children"):
            stack.extend(node.children())


def expected_parameter_count(config: ModelConfig) -> int:
    """Closed-form count: sum of Cout*Cin*K + Cout per conv, plus 2*Cout per batchnorm."""
    fn, fl, n, c = config.filters, config.filter_length, config.channels, config.bottleneck
    layers = []  # (c_in, c_out, k, has_bn)
    c_in = n
    total = 0
    if config.variant == "SFCN":
        total += 2 * config.sinc_filters + 2 * n * config.sinc_filters
        c_in = n * config.sinc_filters
    for _ in range(config.blocks):
        layers.append((c_in, fn, fl, True))
        c_in = fn
    layers.append((c_in, c, fl, True))
    c_in = c
    for _ in range(config.blocks):
        layers.append((c_in, fn, fl, True))
        c_in = fn
    layers.append((c_in, config.out_channels, fl, False))
    for ci, co, k, bn in layers:
        total += co * ci * k + co + (2 * co if bn else 0)
    return total


def batchnorm_layers(model: Model) -> list[BatchNorm1d]:
    return [layer for layer in _walk(model) if isinstance(layer, BatchNorm1d)]


def leaky_layers(model: Model) -> list[LeakyReLU]:
    return [layer for layer in _walk(model) if isinstance(layer, LeakyReLU)]
