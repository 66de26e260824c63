"""Small dense feed-forward networks in numpy.

Everything the neural estimators need lives here: an MLP with cached forward
passes and reverse-mode gradients, the Adam optimizer and a step learning-rate
schedule. Weights are stored as ``(fan_in, fan_out)`` matrices so a layer is
``x @ W + b``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .exceptions import DimensionError, TrainingError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

ACTIVATIONS = ("relu", "gelu")


def relu(x):
    return np.maximum(x, 0.0)


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the standard normal CDF."""
    return x * ndtr(x)


def _activation_grad(name, z):
    if name == "relu":
        return (z > 0).astype(z.dtype)
    return ndtr(z) + z * _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def _activate(name, z):
    return relu(z) if name == "relu" else gelu(z)


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_widths: tuple = ()
    output_dim: int = 1
    activation: str = "relu"
    final_activation: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        widths = (self.input_dim, *self.hidden_widths, self.output_dim)
        if any(int(w) < 1 for w in widths):
            raise DimensionError(f"all layer widths must be >= 1, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.final_activation is not None:
            raise ValueError("only a linear output layer is supported")

    @property
    def layer_sizes(self):
        return (self.input_dim, *self.hidden_widths, self.output_dim)


@dataclass
class Gradients:
    weights: list
    biases: list
    inputs: np.ndarray | None = None

    def arrays(self):
        return [*self.weights, *self.biases]


class MLP:
    """Parameters of a fully connected network plus its forward/backward passes."""

    def __init__(self, spec: MlpSpec, weights, biases):
        self.spec = spec
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        sizes = spec.layer_sizes
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[k], sizes[k + 1]) or b.shape != (sizes[k + 1],):
                raise DimensionError(f"layer {k} has shapes {w.shape}, {b.shape}")

    @classmethod
    def init(cls, spec: MlpSpec, rng: np.random.Generator):
        """Glorot-uniform weights, zero biases."""
        sizes = spec.layer_sizes
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(spec, weights, biases)

    @classmethod
    def zeros(cls, spec: MlpSpec):
        sizes = spec.layer_sizes
        return cls(
            spec,
            [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
            [np.zeros(b) for b in sizes[1:]],
        )

    def copy(self):
        return MLP(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self):
        return [*self.weights, *self.biases]

    @property
    def n_params(self):
        return sum(a.size for a in self.arrays())

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise DimensionError(
                f"expected batch with {self.spec.input_dim} columns, got shape {x.shape}"
            )
        return x

    def forward(self, x):
        out, _ = self.forward_cached(x)
        return out

    __call__ = forward

    def forward_cached(self, x):
        """Forward pass returning the output and the per-layer cache for backward."""
        x = self._check_input(x)
        act = self.spec.activation
        inputs, pre = [], []
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w + b
            if k < last:
                pre.append(z)
                h = _activate(act, z)
            else:
                h = z
        return h, (inputs, pre)

    def backward(self, x, upstream, cache=None):
        """Gradient of ``sum(output * upstream)`` w.r.t. parameters and inputs."""
        if cache is None:
            out, cache = self.forward_cached(x)
        else:
            out = None
        inputs, pre = cache
        upstream = np.asarray(upstream, dtype=np.float64)
        n = inputs[0].shape[0]
        if upstream.shape != (n, self.spec.output_dim):
            raise DimensionError(
                f"upstream gradient must have shape {(n, self.spec.output_dim)}, got {upstream.shape}"
            )
        n_layers = len(self.weights)
        gw = [None] * n_layers
        gb = [None] * n_layers
        delta = upstream
        for k in range(n_layers - 1, -1, -1):
            gw[k] = inputs[k].T @ delta
            gb[k] = delta.sum(axis=0)
            delta = delta @ self.weights[k].T
            if k > 0:
                delta = delta * _activation_grad(self.spec.activation, pre[k - 1])
        return Gradients(gw, gb, delta)


def forward(params: MLP, batch):
    return params.forward(batch)


def backward(params: MLP, batch, upstream_grad):
    return params.backward(batch, upstream_grad)


@dataclass
class Adam:
    """Adam with bias correction; moments are allocated lazily on first step."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def step(self, params: MLP, grads: Gradients, lr: float | None = None, context: str = ""):
        arrays = params.arrays()
        garrays = grads.arrays()
        if len(arrays) != len(garrays):
            raise DimensionError("gradient list does not match parameters")
        for p, g in zip(arrays, garrays):
            if p.shape != g.shape:
                raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                where = f" ({context})" if context else ""
                raise TrainingError(f"non-finite gradient{where}")
        if not self.first_moment:
            self.first_moment = [np.zeros_like(p) for p in arrays]
            self.second_moment = [np.zeros_like(p) for p in arrays]
        self.step_count += 1
        lr = self.lr if lr is None else lr
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(arrays, garrays, self.first_moment, self.second_moment):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params


def adam_step(params: MLP, grads: Gradients, state: Adam, lr: float | None = None):
    state.step(params, grads, lr=lr)
    return params, state


@dataclass(frozen=True)
class StepSchedule:
    initial_lr: float
    drop_factor: float = 1.0
    drop_every: int = 1

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if not 0 < self.drop_factor <= 1:
            raise ValueError("drop_factor must lie in (0, 1]")
        if self.drop_every < 1:
            raise ValueError("drop_every must be >= 1")

    def lr(self, epoch: int) -> float:
        return self.initial_lr * self.drop_factor ** (epoch // self.drop_every)


def minibatches(n, batch_size, rng):
    """Shuffled index blocks covering ``range(n)`` once."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
