"""Feed-forward network ``x -> A_J x_J + b_J`` with ``x_{j+1} = act(A_j x_j + b_j)``.

Forward and reverse-mode passes are written out by hand in float64 and work on a batch
of row vectors.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# name -> (activation, derivative given pre-activation)
ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(float)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "swish": (lambda z: z * _sigmoid(z),
              lambda z: _sigmoid(z) * (1.0 + z * (1.0 - _sigmoid(z)))),
}


@dataclass(eq=False)
class MLPParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("need one bias per weight matrix and at least one layer")
        self.weights = [np.atleast_2d(np.asarray(W, float)) for W in self.weights]
        self.biases = [np.asarray(b, float).ravel() for b in self.biases]
        for j, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape[0] != b.size:
                raise DimensionError(f"layer {j}: weight {W.shape} vs bias {b.shape}")
            if j and W.shape[1] != self.weights[j - 1].shape[0]:
                raise DimensionError(f"layer {j}: input width {W.shape[1]} != {self.weights[j - 1].shape[0]}")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def copy(self) -> MLPParams:
        return MLPParams([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.activation)

    def to_json(self) -> dict:
        tensors = []
        for W, b in zip(self.weights, self.biases):
            tensors.append({"shape": list(W.shape), "data": W.ravel().tolist()})
            tensors.append({"shape": list(b.shape), "data": b.tolist()})
        return {"activation": self.activation, "tensors": tensors}

    @classmethod
    def from_json(cls, doc: dict) -> MLPParams:
        arrs = [np.array(t["data"], float).reshape(t["shape"]) for t in doc["tensors"]]
        return cls(arrs[0::2], arrs[1::2], doc["activation"])

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def init_mlp(dims, rng: np.random.Generator, activation: str = "tanh") -> MLPParams:
    """Gaussian initialisation: He scaling for ReLU, Glorot for tanh/swish; zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        if activation == "relu":
            std = np.sqrt(2.0 / fan_in)
        else:
            std = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(rng.standard_normal((fan_out, fan_in)) * std)
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases, activation)


def forward_batch(p: MLPParams, X: np.ndarray):
    """Return ``(outputs, cache)`` for inputs ``X`` of shape ``(n, d_0)``."""
    X = np.atleast_2d(np.asarray(X, float))
    if X.shape[1] != p.dims[0]:
        raise DimensionError(f"input width {X.shape[1]} != {p.dims[0]}")
    act = ACTIVATIONS[p.activation][0]
    h = X
    inputs, pre = [], []
    for W, b in zip(p.weights[:-1], p.biases[:-1]):
        inputs.append(h)
        z = h @ W.T + b
        pre.append(z)
        h = act(z)
    inputs.append(h)
    out = h @ p.weights[-1].T + p.biases[-1]
    return out, (inputs, pre)


def forward(p: MLPParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, float)
    if x.ndim != 1:
        raise DimensionError("forward expects a single vector; use forward_batch")
    return forward_batch(p, x[None])[0][0]


def backward_batch(p: MLPParams, cache, upstream: np.ndarray):
    """Reverse-mode pass.

    ``upstream`` has shape ``(n, d_out)`` and holds dLoss/dOutput per sample; gradients
    are summed over the batch.  Returns ``(dW list, db list, dX)``.
    """
    inputs, pre = cache
    dact = ACTIVATIONS[p.activation][1]
    g = np.atleast_2d(upstream)
    n_layers = len(p.weights)
    dW = [None] * n_layers
    db = [None] * n_layers
    for j in range(n_layers - 1, -1, -1):
        dW[j] = g.T @ inputs[j]
        db[j] = g.sum(axis=0)
        g = g @ p.weights[j]
        if j > 0:
            g = g * dact(pre[j - 1])
    return dW, db, g


def grad(p: MLPParams, x: np.ndarray, upstream: np.ndarray):
    """Gradients of ``<upstream, forward(p, x)>``.

    Returns ``((dW list, db list), dx)``.  The ReLU derivative at exactly 0 is taken as 0.
    """
    _, cache = forward_batch(p, np.asarray(x, float)[None])
    dW, db, dx = backward_batch(p, cache, np.asarray(upstream, float)[None])
    return (dW, db), dx[0]


def flatten(p: MLPParams) -> np.ndarray:
    return np.concatenate([a.ravel() for W, b in zip(p.weights, p.biases) for a in (W, b)])


def unflatten(p: MLPParams, theta: np.ndarray) -> MLPParams:
    out, i = p.copy(), 0
    for j, (W, b) in enumerate(zip(p.weights, p.biases)):
        out.weights[j] = theta[i:i + W.size].reshape(W.shape)
        i += W.size
        out.biases[j] = theta[i:i + b.size].copy()
        i += b.size
    return out
