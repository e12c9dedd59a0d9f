"""Small feed-forward network primitives shared by classifiers and flows.

Plain-numpy multilayer perceptrons with rectifier hidden layers, manual
backpropagation, and an Adam optimizer.  Kept deliberately minimal: dense
layers only, float64 throughout, deterministic given an RngStream.
"""

from __future__ import annotations

import numpy as np

from .core import RngStream

__all__ = ["MlpParams", "mlp_init", "mlp_forward", "mlp_backward", "Adam", "relu", "sigmoid"]


def relu(a: np.ndarray) -> np.ndarray:
    return np.maximum(a, 0.0)


def sigmoid(a: np.ndarray) -> np.ndarray:
    # Stable in both tails.
    out = np.empty_like(a, dtype=np.float64)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class MlpParams:
    """Weights/biases of a dense net: hidden layers use relu, output is linear."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = weights
        self.biases = biases

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def flat(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.flat())


def mlp_init(
    sizes: list[int],
    stream: RngStream,
    *,
    zero_last: bool = False,
) -> MlpParams:
    """He-normal initialization for relu stacks; biases zero.

    ``zero_last`` zeroes the output layer, which flow conditioners use so a
    fresh flow is the identity map.
    """
    rng = stream.generator()
    weights, biases = [], []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = k == len(sizes) - 2
        if last and zero_last:
            w = np.zeros((fan_in, fan_out))
        else:
            scale = np.sqrt(2.0 / fan_in) if not last else np.sqrt(1.0 / fan_in)
            w = rng.normal(0.0, scale, size=(fan_in, fan_out))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def mlp_forward(params: MlpParams, inputs: np.ndarray, cache: list | None = None) -> np.ndarray:
    """Linear output of the net; pass ``cache=[]`` to record activations for backward."""
    h = inputs
    if cache is not None:
        cache.append(h)
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ w + b
        h = a if k == params.n_layers - 1 else relu(a)
        if cache is not None:
            cache.append(h)
    return h


def mlp_backward(
    params: MlpParams,
    cache: list,
    grad_out: np.ndarray,
) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Backprop ``grad_out`` (d loss / d linear output) through a cached forward.

    Returns (weight grads, bias grads, grad wrt inputs).
    """
    gw = [np.zeros_like(w) for w in params.weights]
    gb = [np.zeros_like(b) for b in params.biases]
    g = grad_out
    for k in range(params.n_layers - 1, -1, -1):
        h_in = cache[k]
        if k != params.n_layers - 1:
            # relu applied after this layer's affine map: gate by activation sign
            g = g * (cache[k + 1] > 0)
        gw[k] = h_in.T @ g
        gb[k] = g.sum(axis=0)
        g = g @ params.weights[k].T
    return gw, gb, g


class Adam:
    """Adaptive-moment gradient descent over a list of parameter arrays."""

    def __init__(self, arrays: list[np.ndarray], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.arrays = arrays
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for a, g, m, v in zip(self.arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
