"""Small dense ReLU networks with hand-written backprop, and an Adam optimizer.

Parameters of a network live in one flat float64 vector; per-layer weights and
biases are views into it. That keeps Adam and Polyak averaging to a handful of
vector operations per network.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralError

DEFAULT_HIDDEN = (64, 64)


@dataclass
class ForwardCache:
    net_id: int
    version: int
    inputs: list          # input to each layer, (B, fan_in)
    pre: list             # pre-activation of each layer, (B, fan_out)
    squeeze: bool


class DenseNet:
    """Affine layers with ReLU between them and an identity output."""

    def __init__(self, layer_sizes, rng=None, params=None):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise StructuralError(f"bad layer sizes {layer_sizes!r}")
        self._slices = []
        offset = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = slice(offset, offset + fan_in * fan_out)
            offset += fan_in * fan_out
            b = slice(offset, offset + fan_out)
            offset += fan_out
            self._slices.append((w, b, fan_in, fan_out))
        self.n_params = offset
        self.version = 0
        if params is not None:
            self.params = params
        else:
            rng = np.random.default_rng() if rng is None else rng
            flat = np.empty(offset)
            for w, b, fan_in, _ in self._slices:
                bound = 1.0 / np.sqrt(fan_in)
                flat[w] = rng.uniform(-bound, bound, w.stop - w.start)
                flat[b] = rng.uniform(-bound, bound, b.stop - b.start)
            self.params = flat

    @property
    def params(self) -> np.ndarray:
        return self._params

    @params.setter
    def params(self, value):
        value = np.array(value, dtype=np.float64)
        if value.shape != (self.n_params,):
            raise StructuralError(f"expected {self.n_params} parameters, got shape {value.shape}")
        self._params = value
        self.version += 1

    def layer(self, i):
        """(W, b) views for layer ``i``; W has shape (fan_out, fan_in)."""
        w, b, fan_in, fan_out = self._slices[i]
        return self._params[w].reshape(fan_out, fan_in), self._params[b]

    @property
    def n_layers(self):
        return len(self._slices)

    def copy(self) -> "DenseNet":
        return DenseNet(self.layer_sizes, params=self._params.copy())

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.ndim != 2 or h.shape[1] != self.layer_sizes[0]:
            raise StructuralError(
                f"input of width {self.layer_sizes[0]} expected, got shape {x.shape}")
        inputs, pre = [], []
        for i in range(self.n_layers):
            W, b = self.layer(i)
            inputs.append(h)
            z = h @ W.T + b
            pre.append(z)
            h = np.maximum(z, 0.0) if i < self.n_layers - 1 else z
        cache = ForwardCache(id(self), self.version, inputs, pre, squeeze)
        return (h[0] if squeeze else h), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache: ForwardCache, upstream):
        """Gradients of ``sum(upstream * output)``; returns (flat param grads, input grad)."""
        if cache.net_id != id(self) or cache.version != self.version:
            raise StructuralError("forward cache is stale: network changed since the forward pass")
        g = np.asarray(upstream, dtype=np.float64)
        if cache.squeeze:
            g = g[None, :]
        if g.shape != cache.pre[-1].shape:
            raise StructuralError(f"upstream shape {g.shape} does not match output {cache.pre[-1].shape}")
        grads = np.zeros(self.n_params)
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                # ReLU subgradient is 0 at exactly 0
                g = g * (cache.pre[i] > 0)
            w, b, fan_in, fan_out = self._slices[i]
            grads[w] = (g.T @ cache.inputs[i]).ravel()
            grads[b] = g.sum(axis=0)
            W, _ = self.layer(i)
            g = g @ W
        return grads, (g[0] if cache.squeeze else g)


def forward(net: DenseNet, x):
    return net.forward(x)


def backward(net: DenseNet, cache: ForwardCache, upstream):
    return net.backward(cache, upstream)


def mlp(in_dim, out_dim, hidden=DEFAULT_HIDDEN, rng=None) -> DenseNet:
    return DenseNet((in_dim, *hidden, out_dim), rng=rng)


def mlp_param_count(in_dim, out_dim, hidden=DEFAULT_HIDDEN) -> int:
    sizes = (in_dim, *hidden, out_dim)
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass
class Adam:
    """Bias-corrected Adam over one flat parameter vector."""

    n_params: int
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.n_params)
        if self.v is None:
            self.v = np.zeros(self.n_params)

    def step(self, params, grads):
        """Return updated parameters; the moment estimates are advanced in place."""
        params = np.asarray(params, dtype=np.float64)
        grads = np.asarray(grads, dtype=np.float64)
        if params.shape != self.m.shape or grads.shape != self.m.shape:
            raise StructuralError(
                f"Adam expects shape {self.m.shape}, got params {params.shape} grads {grads.shape}")
        self.step_count += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1 - self.beta2) * grads * grads
        m_hat = self.m / (1 - self.beta1 ** self.step_count)
        v_hat = self.v / (1 - self.beta2 ** self.step_count)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "step_count": self.step_count, "m": self.m.tolist(), "v": self.v.tolist()}

    @classmethod
    def from_state_dict(cls, doc):
        m = np.asarray(doc["m"], dtype=np.float64)
        return cls(m.size, doc["lr"], doc["beta1"], doc["beta2"], doc["eps"],
                   doc["step_count"], m, np.asarray(doc["v"], dtype=np.float64))


def adam_step(params, grads, state: Adam):
    return state.step(params, grads), state
