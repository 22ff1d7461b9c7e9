"""MLP encoder with hand-written forward/backward passes and SGD with momentum."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import ArgumentError, NonFiniteError, ShapeError

DEFAULT_HIDDEN = (500, 500, 2000)


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ArgumentError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ArgumentError(f"momentum must be in [0, 1), got {self.momentum}")
        if not self.weight_decay >= 0:
            raise ArgumentError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass
class EncoderState:
    """Weights are stored (fan_in, fan_out) so a layer is ``A @ W + b``."""

    layer_dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    vel_weights: List[np.ndarray] = field(default_factory=list)
    vel_biases: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.vel_weights:
            self.vel_weights = [np.zeros_like(w) for w in self.weights]
        if not self.vel_biases:
            self.vel_biases = [np.zeros_like(b) for b in self.biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[k], self.layer_dims[k + 1]) or b.shape != (self.layer_dims[k + 1],):
                raise ShapeError(f"layer {k}: weight {w.shape} / bias {b.shape} do not match dims {self.layer_dims}")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> List[np.ndarray]:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "EncoderState":
        return EncoderState(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [v.copy() for v in self.vel_weights],
            [v.copy() for v in self.vel_biases],
        )


@dataclass
class Tape:
    """Per-layer inputs; ``inputs[k + 1]`` is the ReLU output of layer k, so it doubles as the mask."""

    inputs: List[np.ndarray]
    output_shape: tuple


@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    inputs: Optional[np.ndarray]

    def params(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def encoder_dims(input_dim: int, latent_dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN) -> List[int]:
    return [int(input_dim), *[int(h) for h in hidden], int(latent_dim)]


def init_params(layer_dims: Sequence[int], seed=0, dtype=np.float64) -> EncoderState:
    """Glorot-uniform weights, zero biases, zero momentum."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ArgumentError(f"need at least input and output dims, all >= 1; got {list(layer_dims)}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return EncoderState(dims, weights, biases)


def forward(enc: EncoderState, X):
    X = np.asarray(X, dtype=enc.dtype)
    if X.ndim != 2 or X.shape[1] != enc.input_dim:
        raise ShapeError(f"encoder expects {enc.input_dim} input columns, got shape {X.shape}")
    inputs = []
    a = X
    last = len(enc.weights) - 1
    for k, (w, b) in enumerate(zip(enc.weights, enc.biases)):
        inputs.append(a)
        a = a @ w
        a += b
        if k != last:
            np.maximum(a, 0, out=a)
    return a, Tape(inputs, a.shape)


def backward(enc: EncoderState, tape: Tape, dH, input_grad: bool = True) -> Gradients:
    """Parameter gradients; ``input_grad=False`` skips dL/dX (``Gradients.inputs`` is then None)."""
    dH = np.asarray(dH, dtype=enc.dtype)
    if dH.shape != tape.output_shape:
        raise ShapeError(f"upstream gradient has shape {dH.shape}, expected {tape.output_shape}")
    n_layers = len(enc.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    g = dH
    for k in range(n_layers - 1, -1, -1):
        if k != n_layers - 1:
            # relu(z) > 0 exactly where z > 0; g is a fresh product here, safe to overwrite
            np.multiply(g, tape.inputs[k + 1] > 0, out=g)
        gw[k] = tape.inputs[k].T @ g
        gb[k] = g.sum(axis=0)
        if k or input_grad:
            g = g @ enc.weights[k].T
    return Gradients(gw, gb, g if input_grad else None)


def momentum_update(param, velocity, grad, lr, momentum, weight_decay=0.0):
    """Return the new ``(param, velocity)`` without touching the inputs.

    ``v <- momentum * v + grad + weight_decay * param``; ``param <- param - lr * v``.
    """
    v = momentum * velocity
    v += grad
    if weight_decay:
        v += weight_decay * param
    p = v * -lr
    p += param
    return p, v


def sgd_step(enc: EncoderState, grads: Gradients, cfg: OptimizerConfig) -> EncoderState:
    """Apply one update in place. Nothing is modified if any new value is non-finite."""
    new = []
    for k in range(len(enc.weights)):
        w, vw = momentum_update(enc.weights[k], enc.vel_weights[k], grads.weights[k],
                                cfg.learning_rate, cfg.momentum, cfg.weight_decay)
        b, vb = momentum_update(enc.biases[k], enc.vel_biases[k], grads.biases[k],
                                cfg.learning_rate, cfg.momentum, cfg.weight_decay)
        for arr in (w, vw, b, vb):
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"non-finite parameter after update of layer {k}")
        new.append((w, vw, b, vb))
    for k, (w, vw, b, vb) in enumerate(new):
        enc.weights[k], enc.vel_weights[k], enc.biases[k], enc.vel_biases[k] = w, vw, b, vb
    return enc
