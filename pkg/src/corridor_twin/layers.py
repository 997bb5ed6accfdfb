"""Parameterized layers used by the surrogate modules.

All layers hold their parameters as named ``Tensor`` leaves and expose a
``parameters()`` iterator of (name, tensor) pairs.  Weights are initialized
Glorot-uniform, biases zero.  Forward passes accept a leading batch axis.
"""

from __future__ import annotations

import math
from typing import Iterable, Iterator, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


class Layer:
    def parameters(self) -> Iterator[Tuple[str, Tensor]]:
        raise NotImplementedError


def _param(rng: np.random.Generator, name: str, shape, fan_in: int, fan_out: int) -> Tensor:
    return Tensor(ad.glorot_uniform(rng, shape, fan_in, fan_out), requires_grad=True, name=name)


def _zeros(name: str, shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


class DenseLayer(Layer):
    """Fully connected layer: activation(x @ W.T + b)."""

    def __init__(self, in_width: int, out_width: int, activation: str = "none",
                 rng: Optional[np.random.Generator] = None, name: str = "dense"):
        if activation not in ("relu", "none"):
            raise ValueError(f"unsupported activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_width = in_width
        self.out_width = out_width
        self.activation = activation
        self.weight = _param(rng, f"{name}.weight", (out_width, in_width), in_width, out_width)
        self.bias = _zeros(f"{name}.bias", (out_width,))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_width:
            raise ShapeError(f"dense: input width {x.shape[-1]} != {self.in_width}")
        y = ad.linear(x, self.weight, self.bias)
        return ad.relu(y) if self.activation == "relu" else y

    def parameters(self):
        yield self.weight.name, self.weight
        yield self.bias.name, self.bias


def dense_forward(layer: DenseLayer, x) -> Tensor:
    return layer(x if isinstance(x, Tensor) else Tensor(x))


class MlpBlock(Layer):
    """A chain of dense layers; consecutive widths must match."""

    def __init__(self, widths: Iterable[int], activation: str = "relu",
                 final_activation: str = "relu",
                 rng: Optional[np.random.Generator] = None, name: str = "mlp"):
        widths = list(widths)
        if len(widths) < 2:
            raise ValueError("MlpBlock needs at least input and output widths")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = []
        for i in range(len(widths) - 1):
            act = final_activation if i == len(widths) - 2 else activation
            self.layers.append(DenseLayer(widths[i], widths[i + 1], act, rng, f"{name}.{i}"))

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self):
        for layer in self.layers:
            yield from layer.parameters()


class TemporalConvLayer(Layer):
    """1-D cross-correlation over [batch, channels, length]."""

    def __init__(self, in_channels: int, out_channels: int, kernel_width: int,
                 stride: int = 1, padding: int = 0,
                 rng: Optional[np.random.Generator] = None, name: str = "conv"):
        if stride < 1 or padding < 0 or kernel_width < 1:
            raise ValueError("conv1d: kernel_width/stride must be >= 1, padding >= 0")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.padding = padding
        self.kernel_width = kernel_width
        fan_in, fan_out = in_channels * kernel_width, out_channels * kernel_width
        self.kernels = _param(rng, f"{name}.kernels",
                              (out_channels, in_channels, kernel_width), fan_in, fan_out)
        self.bias = _zeros(f"{name}.bias", (out_channels,))

    def output_length(self, L: int) -> int:
        return (L + 2 * self.padding - self.kernel_width) // self.stride + 1

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv1d(x, self.kernels, self.bias, self.stride, self.padding)

    def parameters(self):
        yield self.kernels.name, self.kernels
        yield self.bias.name, self.bias


def conv1d_forward(layer: TemporalConvLayer, x) -> Tensor:
    return layer(x if isinstance(x, Tensor) else Tensor(x))


class TemporalDeconvLayer(Layer):
    """1-D transposed convolution, the adjoint of TemporalConvLayer."""

    def __init__(self, in_channels: int, out_channels: int, kernel_width: int,
                 stride: int = 1, rng: Optional[np.random.Generator] = None,
                 name: str = "deconv"):
        if stride < 1 or kernel_width < 1:
            raise ValueError("conv_transpose1d: kernel_width/stride must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.kernel_width = kernel_width
        fan_in, fan_out = in_channels * kernel_width, out_channels * kernel_width
        self.kernels = _param(rng, f"{name}.kernels",
                              (in_channels, out_channels, kernel_width), fan_in, fan_out)
        self.bias = _zeros(f"{name}.bias", (out_channels,))

    def output_length(self, L: int) -> int:
        return (L - 1) * self.stride + self.kernel_width

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv_transpose1d(x, self.kernels, self.bias, self.stride)

    def parameters(self):
        yield self.kernels.name, self.kernels
        yield self.bias.name, self.bias


def convtranspose1d_forward(layer: TemporalDeconvLayer, x) -> Tensor:
    return layer(x if isinstance(x, Tensor) else Tensor(x))


class TemporalPoolLayer(Layer):
    """1-D max pooling; gradient goes to the first maximal index per window."""

    def __init__(self, window: int, stride: int):
        if window < 1 or stride < 1:
            raise ValueError("maxpool1d: window and stride must be >= 1")
        self.window = window
        self.stride = stride

    def output_length(self, L: int) -> int:
        return (L - self.window) // self.stride + 1

    def __call__(self, x: Tensor) -> Tensor:
        return ad.maxpool1d(x, self.window, self.stride)

    def parameters(self):
        return iter(())


def maxpool1d_forward(layer: TemporalPoolLayer, x) -> Tensor:
    return layer(x if isinstance(x, Tensor) else Tensor(x))


class SelfAttentionBlock(Layer):
    """Single-head scaled dot-product self-attention over token rows."""

    def __init__(self, in_width: int, model_width: int,
                 rng: Optional[np.random.Generator] = None, name: str = "attn"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.model_width = model_width
        self.query = DenseLayer(in_width, model_width, "none", rng, f"{name}.query")
        self.key = DenseLayer(in_width, model_width, "none", rng, f"{name}.key")
        self.value = DenseLayer(in_width, model_width, "none", rng, f"{name}.value")

    def __call__(self, x: Tensor) -> Tensor:
        """x: [batch, tokens, in_width] -> [batch, tokens, model_width]."""
        q = self.query(x)
        k = self.key(x)
        v = self.value(x)
        scores = ad.matmul(q, ad.transpose(k, (0, 2, 1)))
        scores = ad.scale(scores, 1.0 / math.sqrt(self.model_width))
        weights = ad.softmax_axis(scores, axis=-1)
        return ad.matmul(weights, v)

    def attention_weights(self, x: Tensor) -> np.ndarray:
        """The softmax matrix alone, for inspection and tests."""
        q = self.query(x).data
        k = self.key(x).data
        scores = q @ np.swapaxes(k, -1, -2) / math.sqrt(self.model_width)
        shifted = scores - scores.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)

    def parameters(self):
        for blk in (self.query, self.key, self.value):
            yield from blk.parameters()


def self_attention_forward(block: SelfAttentionBlock, x) -> Tensor:
    """Unbatched convenience wrapper: [tokens, width] -> [tokens, width]."""
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.data.ndim == 2:
        batched = ad.reshape(t, (1,) + t.data.shape)
        return ad.reshape(block(batched), (t.data.shape[0], block.model_width))
    return block(t)
