"""Small dense networks in float64: forward/backward, Adam, Polyak blending, checkpoints.

Parameters of one network live in a single flat vector; per-layer weight and
bias arrays are views into it, so optimiser and target updates are single
vector operations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np

ACTIVATIONS = ("linear", "tanh_scaled")
CHECKPOINT_FORMAT = "dollyshot-checkpoint"
CHECKPOINT_VERSION = 1


class StaleCacheError(RuntimeError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


def _layout(layer_sizes: Sequence[int]):
    """(weight slice, weight shape, bias slice) for each layer of the flat vector."""
    out, off = [], 0
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        w = slice(off, off + fan_in * fan_out)
        off += fan_in * fan_out
        b = slice(off, off + fan_out)
        off += fan_out
        out.append((w, (fan_in, fan_out), b))
    return out, off


class NetworkParams:
    """Weights and biases of a ReLU MLP with a linear or scaled-tanh output layer."""

    def __init__(self, layer_sizes: Sequence[int], output_activation: str = "linear",
                 max_action: float = 1.0, flat: Optional[np.ndarray] = None):
        if len(layer_sizes) < 2 or any(int(n) <= 0 for n in layer_sizes):
            raise ValueError(f"bad layer sizes {layer_sizes}")
        if output_activation not in ACTIVATIONS:
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        self.output_activation = output_activation
        self.max_action = float(max_action)
        self._layout, size = _layout(self.layer_sizes)
        if flat is None:
            flat = np.zeros(size)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (size,):
            raise ValueError(f"expected {size} parameters, got {flat.shape}")
        self.flat = flat
        self.layers = [(flat[w].reshape(shape), flat[b]) for w, shape, b in self._layout]
        self.version = 0

    @property
    def size(self) -> int:
        return self.flat.size

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.layer_sizes, self.output_activation, self.max_action, self.flat.copy())

    def assign(self, other: "NetworkParams") -> None:
        _check_same_shape(self, other)
        self.flat[:] = other.flat
        self.version += 1

    def grad_views(self, grad: np.ndarray):
        return [(grad[w].reshape(shape), grad[b]) for w, shape, b in self._layout]

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "output_activation": self.output_activation,
            "max_action": self.max_action,
            "params": self.flat.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkParams":
        return cls(d["layer_sizes"], d["output_activation"], d["max_action"], np.array(d["params"], dtype=np.float64))


def _check_same_shape(a: NetworkParams, b: NetworkParams) -> None:
    if a.layer_sizes != b.layer_sizes:
        raise ValueError(f"shape mismatch: {a.layer_sizes} vs {b.layer_sizes}")


def init_network(layer_sizes: Sequence[int], rng: np.random.Generator, output_activation: str = "linear",
                 max_action: float = 1.0, final_scale: Optional[float] = None) -> NetworkParams:
    """Uniform(+-1/sqrt(fan_in)) init; ``final_scale`` overrides the bound of the last layer."""
    net = NetworkParams(layer_sizes, output_activation, max_action)
    for i, (W, b) in enumerate(net.layers):
        bound = 1.0 / math.sqrt(W.shape[0])
        if final_scale is not None and i == len(net.layers) - 1:
            bound = final_scale
        W[:] = rng.uniform(-bound, bound, size=W.shape)
        b[:] = rng.uniform(-bound, bound, size=b.shape)
    return net


@dataclass
class Cache:
    owner: int
    version: int
    activations: List[np.ndarray]
    output: np.ndarray
    squeeze: bool
    tanh: Optional[np.ndarray] = None


def forward(params: NetworkParams, x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    a = x[None, :] if squeeze else x
    if a.shape[1] != params.layer_sizes[0]:
        raise ValueError(f"input width {a.shape[1]} != {params.layer_sizes[0]}")
    acts = [a]
    last = len(params.layers) - 1
    for i, (W, b) in enumerate(params.layers):
        z = a @ W + b
        if i < last:
            a = np.maximum(z, 0.0)
            acts.append(a)
    tanh = None
    if params.output_activation == "tanh_scaled":
        tanh = np.tanh(z)
        out = params.max_action * tanh
    else:
        out = z
    cache = Cache(id(params), params.version, acts, out, squeeze, tanh)
    return (out[0] if squeeze else out), cache


def predict(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    return forward(params, x)[0]


@dataclass
class Gradients:
    params: np.ndarray
    inputs: Optional[np.ndarray] = None


def backward(params: NetworkParams, cache: Cache, output_gradient: np.ndarray,
             input_gradient: bool = False) -> Gradients:
    """Reverse-mode gradients of ``sum(output * output_gradient)``."""
    if cache.owner != id(params) or cache.version != params.version:
        raise StaleCacheError("cache does not belong to the current parameters")
    g = np.asarray(output_gradient, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.output.shape:
        raise ValueError(f"output gradient shape {g.shape} != {cache.output.shape}")
    if cache.tanh is not None:
        g = g * (params.max_action * (1.0 - cache.tanh ** 2))
    grad = np.empty(params.size)
    views = params.grad_views(grad)
    for i in range(len(params.layers) - 1, -1, -1):
        a_in = cache.activations[i]
        gW, gb = views[i]
        np.matmul(a_in.T, g, out=gW)
        gb[:] = g.sum(axis=0)
        if i > 0 or input_gradient:
            g = g @ params.layers[i][0].T
            if i > 0:
                g *= a_in > 0.0
    inputs = None
    if input_gradient:
        inputs = g[0] if cache.squeeze else g
    return Gradients(grad, inputs)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: NetworkParams, lr: float = 0.0005, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(params.size), np.zeros(params.size), 0, lr, beta1, beta2, eps)


def adam_step(params: NetworkParams, grads: np.ndarray, state: AdamState) -> None:
    """One bias-corrected Adam update, in place. Non-finite gradients are rejected."""
    if isinstance(grads, Gradients):
        grads = grads.params
    if grads.shape != params.flat.shape or state.m.shape != params.flat.shape:
        raise ValueError("gradient/optimiser shape does not match parameters")
    if not np.all(np.isfinite(grads)):
        bad = int(np.sum(~np.isfinite(grads)))
        raise NonFiniteGradientError(f"{bad} non-finite gradient entries; update rejected")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    params.flat -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    params.version += 1


def polyak_blend(target: NetworkParams, online: NetworkParams, tau: float) -> NetworkParams:
    """target <- (1 - tau) * target + tau * online, elementwise and in place."""
    _check_same_shape(target, online)
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    target.flat[:] = (1.0 - tau) * target.flat + tau * online.flat
    target.version += 1
    return target


def numerical_gradient(loss: Callable[[], float], params: NetworkParams, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``loss`` with respect to every parameter."""
    grad = np.empty(params.size)
    flat = params.flat
    for i in range(params.size):
        old = flat[i]
        flat[i] = old + h
        up = loss()
        flat[i] = old - h
        down = loss()
        flat[i] = old
        grad[i] = (up - down) / (2 * h)
    return grad


# -- checkpoints ---------------------------------------------------------------

def dump_checkpoint(fh: TextIO, header: dict, networks: Dict[str, NetworkParams]) -> None:
    """Versioned JSON: header first, then each network's flat parameters in declared order.

    Floats are written with Python's shortest round-trip repr, so a reload is bit-exact.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "header": header,
        "network_order": list(networks),
        "networks": {name: net.to_dict() for name, net in networks.items()},
    }
    json.dump(doc, fh, indent=1, allow_nan=False)
    fh.write("\n")


def load_checkpoint(fh: TextIO) -> Tuple[dict, Dict[str, NetworkParams]]:
    doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a dollyshot checkpoint")
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')}")
    nets = {name: NetworkParams.from_dict(doc["networks"][name]) for name in doc["network_order"]}
    return doc["header"], nets
