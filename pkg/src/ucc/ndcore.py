"""Dense numeric substrate: a small MLP with explicit forward/backward passes.

Matrices are plain float64 ``numpy.ndarray`` objects of shape (rows, cols).
Weights are stored as (fan_in, fan_out) so a layer computes ``x @ W + b``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

ACTIVATIONS = ("relu", "sigmoid", "linear", "softmax")


def as_matrix(x, name: str = "input") -> np.ndarray:
    """Coerce ``x`` to a finite 2-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


@dataclass
class Layer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)
    activation: str = "linear"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2:
            raise ShapeError(f"weight must be 2-D, got {self.weight.shape}")
        if self.bias.shape[0] != self.weight.shape[1]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} != fan_out {self.weight.shape[1]}")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]


@dataclass
class MlpParams:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ContractError("an MLP needs at least one layer")
        for k in range(len(self.layers) - 1):
            if self.layers[k].fan_out != self.layers[k + 1].fan_in:
                raise ShapeError(
                    f"layer {k} outputs {self.layers[k].fan_out} but layer {k + 1} "
                    f"expects {self.layers[k + 1].fan_in}")
            if self.layers[k].activation == "softmax":
                raise ContractError("softmax is only allowed as the final activation")

    @property
    def in_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def out_dim(self) -> int:
        return self.layers[-1].fan_out

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [layer.fan_out for layer in self.layers]

    def copy(self) -> "MlpParams":
        return MlpParams([Layer(l.weight.copy(), l.bias.copy(), l.activation)
                          for l in self.layers])

    def num_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def to_vector(self) -> np.ndarray:
        parts = []
        for l in self.layers:
            parts.append(l.weight.ravel())
            parts.append(l.bias)
        return np.concatenate(parts)

    def with_vector(self, vec: np.ndarray) -> "MlpParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.num_params():
            raise ShapeError(f"expected {self.num_params()} parameters, got {vec.size}")
        layers, pos = [], 0
        for l in self.layers:
            w = vec[pos:pos + l.weight.size].reshape(l.weight.shape)
            pos += l.weight.size
            b = vec[pos:pos + l.bias.size]
            pos += l.bias.size
            layers.append(Layer(w.copy(), b.copy(), l.activation))
        return MlpParams(layers)


@dataclass
class GradBundle:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray

    def to_vector(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def scaled(self, factor: float) -> "GradBundle":
        return GradBundle([w * factor for w in self.weights],
                          [b * factor for b in self.biases], self.input * factor)


@dataclass
class ForwardCache:
    params: MlpParams
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each layer
    outputs: list[np.ndarray] = field(default_factory=list)  # post-activation


def xavier_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_mlp(dims: Sequence[int], activations: Sequence[str],
             rng: np.random.Generator) -> MlpParams:
    """Xavier-uniform weights and zero biases for a chain of ``dims``."""
    if len(dims) - 1 != len(activations):
        raise ContractError("need exactly one activation per layer")
    layers = [Layer(xavier_uniform(a, b, rng), np.zeros(b), act)
              for a, b, act in zip(dims[:-1], dims[1:], activations)]
    return MlpParams(layers)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "linear":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return _sigmoid(z)
    # softmax
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _activate_backward(out: np.ndarray, g: np.ndarray, kind: str) -> np.ndarray:
    """Map an upstream gradient on the activation output to the pre-activation."""
    if kind == "linear":
        return g
    if kind == "relu":
        return g * (out > 0)
    if kind == "sigmoid":
        return g * out * (1.0 - out)
    return out * (g - np.sum(g * out, axis=1, keepdims=True))


def mlp_forward(params: MlpParams, x) -> tuple[np.ndarray, ForwardCache]:
    x = as_matrix(x)
    if x.shape[1] != params.in_dim:
        raise ShapeError(f"input has {x.shape[1]} columns, network expects {params.in_dim}")
    cache = ForwardCache(params)
    h = x
    for layer in params.layers:
        cache.inputs.append(h)
        h = _activate(h @ layer.weight + layer.bias, layer.activation)
        cache.outputs.append(h)
    return h, cache


def mlp_backward(params: MlpParams, cache: ForwardCache, upstream) -> GradBundle:
    """Reverse-mode gradients of ``sum(upstream * output)``."""
    if cache.params is not params or len(cache.outputs) != len(params.layers):
        raise ShapeError("cache was not produced by mlp_forward on these parameters")
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != cache.outputs[-1].shape:
        raise ShapeError(f"upstream shape {g.shape} != output shape {cache.outputs[-1].shape}")
    n = len(params.layers)
    wgrads: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    bgrads: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for k in range(n - 1, -1, -1):
        layer = params.layers[k]
        gz = _activate_backward(cache.outputs[k], g, layer.activation)
        wgrads[k] = cache.inputs[k].T @ gz
        bgrads[k] = gz.sum(axis=0)
        g = gz @ layer.weight.T
    return GradBundle(wgrads, bgrads, g)


def grad_check(f: Callable[[np.ndarray], float], params, analytic, eps: float = 1e-5) -> float:
    """Largest |analytic - central difference| / max(1, |central difference|)."""
    if eps <= 0:
        raise ContractError("eps must be positive")
    theta = np.array(params, dtype=np.float64).ravel()
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if theta.shape != analytic.shape:
        raise ShapeError(f"params ({theta.size}) and analytic ({analytic.size}) differ in length")
    worst = 0.0
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + eps
        fp = f(theta.copy())
        theta[i] = orig - eps
        fm = f(theta.copy())
        theta[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"objective is not finite near coordinate {i}")
        numeric = (fp - fm) / (2 * eps)
        err = abs(analytic[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return float(worst)
