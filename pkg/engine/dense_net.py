"""
Rarefy — Dense Network Engine
Fixed MLPs in float64 with exact reverse-mode gradients.

Weights are stored as (fan_in, fan_out) row-major matrices and a layer
computes act(x @ W + b). The last layer may use a grouped softmax: one
independent softmax per packet field, widths given by ``groups``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, softmax

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity", "grouped-softmax")

# Every parameter assignment gets a fresh version so old caches are detectable.
_versions = itertools.count(1)


class DimensionError(ValueError):
    """Input, gradient, or parameter shapes do not compose."""


class StaleCacheError(RuntimeError):
    """A forward cache was replayed against a different or updated net."""


@dataclass
class Layer:
    weight: np.ndarray     # (fan_in, fan_out)
    bias: np.ndarray       # (fan_out,)
    activation: str

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class ForwardCache:
    net_version: int
    shapes: Tuple[Tuple[int, int], ...]
    inputs: Tuple[np.ndarray, ...]
    outputs: Tuple[np.ndarray, ...]


class DenseNet:
    """A fixed stack of dense layers."""

    def __init__(
        self,
        layers: Sequence[Layer],
        groups: Optional[Sequence[int]] = None,
        temperature: float = 1.0,
    ):
        if not layers:
            raise DimensionError("DenseNet needs at least one layer")
        self.layers: List[Layer] = []
        for i, layer in enumerate(layers):
            weight = np.array(layer.weight, dtype=np.float64)
            bias = np.array(layer.bias, dtype=np.float64)
            if weight.ndim != 2 or bias.shape != (weight.shape[1],):
                raise DimensionError(f"layer {i}: weight {weight.shape} / bias {bias.shape} mismatch")
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation '{layer.activation}'")
            if layer.activation == "grouped-softmax" and i != len(layers) - 1:
                raise ValueError("grouped-softmax is only allowed on the output layer")
            if i > 0 and weight.shape[0] != self.layers[-1].fan_out:
                raise DimensionError(
                    f"layer {i} expects {weight.shape[0]} inputs, previous layer emits {self.layers[-1].fan_out}"
                )
            if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
                raise ValueError(f"layer {i}: non-finite parameters")
            self.layers.append(Layer(weight, bias, layer.activation))

        self.groups: Optional[Tuple[int, ...]] = None
        if self.layers[-1].activation == "grouped-softmax":
            groups = tuple(int(g) for g in (groups or (self.output_dim,)))
            if any(g < 1 for g in groups) or sum(groups) != self.output_dim:
                raise DimensionError(f"softmax groups {groups} do not sum to output width {self.output_dim}")
            self.groups = groups
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.temperature = float(temperature)
        self.version = next(_versions)

    @classmethod
    def build(
        cls,
        sizes: Sequence[int],
        activations: Sequence[str],
        rng: np.random.Generator,
        groups: Optional[Sequence[int]] = None,
        temperature: float = 1.0,
    ) -> "DenseNet":
        """Glorot-uniform weights, zero biases."""
        if len(activations) != len(sizes) - 1:
            raise DimensionError("need one activation per layer")
        layers = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weight = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            layers.append(Layer(weight, np.zeros(fan_out), act))
        return cls(layers, groups=groups, temperature=temperature)

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].fan_out

    @property
    def shapes(self) -> Tuple[Tuple[int, int], ...]:
        return tuple(layer.weight.shape for layer in self.layers)

    def params(self) -> List[np.ndarray]:
        """[W0, b0, W1, b1, ...] (live references)."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def set_params(self, params: Sequence[np.ndarray]):
        if len(params) != 2 * len(self.layers):
            raise DimensionError(f"expected {2 * len(self.layers)} parameter arrays, got {len(params)}")
        for i, layer in enumerate(self.layers):
            weight = np.array(params[2 * i], dtype=np.float64)
            bias = np.array(params[2 * i + 1], dtype=np.float64)
            if weight.shape != layer.weight.shape or bias.shape != layer.bias.shape:
                raise DimensionError(f"layer {i}: parameter shape mismatch")
            layer.weight, layer.bias = weight, bias
        self.version = next(_versions)

    def copy(self) -> "DenseNet":
        return DenseNet(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers],
            groups=self.groups,
            temperature=self.temperature,
        )

    def num_params(self) -> int:
        return sum(p.size for p in self.params())

    def __repr__(self):
        dims = [self.input_dim] + [l.fan_out for l in self.layers]
        acts = ",".join(l.activation for l in self.layers)
        return f"DenseNet({'-'.join(map(str, dims))}, {acts})"


def grouped_softmax(z: np.ndarray, groups: Sequence[int], temperature: float = 1.0) -> np.ndarray:
    out = np.empty_like(z)
    start = 0
    for width in groups:
        out[:, start:start + width] = softmax(z[:, start:start + width] / temperature, axis=1)
        start += width
    return out


def _activate(z: np.ndarray, activation: str, net: DenseNet) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "tanh":
        return np.tanh(z)
    if activation == "sigmoid":
        return expit(z)
    if activation == "identity":
        return z
    return grouped_softmax(z, net.groups, net.temperature)


def _activation_grad(activation: str, y: np.ndarray, g: np.ndarray, net: DenseNet) -> np.ndarray:
    """dL/dz given y = act(z) and dL/dy."""
    if activation == "relu":
        return g * (y > 0.0)
    if activation == "tanh":
        return g * (1.0 - y * y)
    if activation == "sigmoid":
        return g * y * (1.0 - y)
    if activation == "identity":
        return g
    dz = np.empty_like(g)
    start = 0
    for width in net.groups:
        ys = y[:, start:start + width]
        gs = g[:, start:start + width]
        inner = np.sum(gs * ys, axis=1, keepdims=True)
        dz[:, start:start + width] = ys * (gs - inner) / net.temperature
        start += width
    return dz


def forward(
    net: DenseNet,
    x: np.ndarray,
    logit_noise: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, ForwardCache]:
    """
    Run a batch through the net.

    ``logit_noise`` is added to the last layer's pre-activation (Gumbel
    noise for the generator head); it is treated as a constant by backward.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimensionError(f"input width {x.shape[-1]} != net input {net.input_dim}")

    inputs, outputs = [], []
    h = x
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        inputs.append(h)
        z = h @ layer.weight + layer.bias
        if logit_noise is not None and i == last:
            if logit_noise.shape != z.shape:
                raise DimensionError(f"logit noise {logit_noise.shape} != output {z.shape}")
            z = z + logit_noise
        h = _activate(z, layer.activation, net)
        outputs.append(h)

    cache = ForwardCache(net.version, net.shapes, tuple(inputs), tuple(outputs))
    return h, cache


def backward(
    net: DenseNet,
    cache: ForwardCache,
    grad_output: np.ndarray,
) -> Tuple[List[np.ndarray], np.ndarray]:
    """Parameter gradients (same order as ``net.params()``) and dL/dx."""
    if cache.net_version != net.version or cache.shapes != net.shapes:
        raise StaleCacheError("forward cache does not belong to this net (or parameters changed since)")
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape != cache.outputs[-1].shape:
        raise DimensionError(f"output gradient {g.shape} != output {cache.outputs[-1].shape}")

    grads: List[Optional[np.ndarray]] = [None] * (2 * len(net.layers))
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        dz = _activation_grad(layer.activation, cache.outputs[i], g, net)
        grads[2 * i] = cache.inputs[i].T @ dz
        grads[2 * i + 1] = dz.sum(axis=0)
        g = dz @ layer.weight.T
    return grads, g


def clip_weights(net: DenseNet, c: float) -> DenseNet:
    """Copy of ``net`` with every weight and bias clamped to [-c, c]."""
    if c <= 0:
        raise ValueError("clip constant must be positive")
    clipped = net.copy()
    clipped.set_params([np.clip(p, -c, c) for p in clipped.params()])
    return clipped
