"""Dense MLP forward/backward passes, AdamW and the MSE loss.

Everything is float64 numpy. Batches are ``(n, features)`` arrays and a
layer stores its weight as ``(out_dim, in_dim)``.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, UsageError


class LinearLayer:
    """Affine map ``y = x @ W.T + b`` with gradient and AdamW moment buffers."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise ConfigError(
                f"bias shape {bias.shape} does not match weight shape {weight.shape}"
            )
        self.weight = weight
        self.bias = bias
        self.grad_weight = np.zeros_like(weight)
        self.grad_bias = np.zeros_like(bias)
        self.m_weight = np.zeros_like(weight)
        self.v_weight = np.zeros_like(weight)
        self.m_bias = np.zeros_like(bias)
        self.v_bias = np.zeros_like(bias)

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "LinearLayer":
        # uniform fan-in scaling, the torch.nn.Linear default
        bound = 1.0 / np.sqrt(in_dim)
        weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        bias = rng.uniform(-bound, bound, size=out_dim)
        return cls(weight, bias)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def params(self):
        """Yield ``(param, grad, m, v)`` tuples; all arrays are updated in place."""
        yield self.weight, self.grad_weight, self.m_weight, self.v_weight
        yield self.bias, self.grad_bias, self.m_bias, self.v_bias


class Mlp:
    """Stack of linear layers with ReLU between them and identity on the output."""

    def __init__(self, layers: list[LinearLayer]):
        if not layers:
            raise ConfigError("an Mlp needs at least one layer")
        for i, (a, b) in enumerate(zip(layers[:-1], layers[1:])):
            if a.out_dim != b.in_dim:
                raise ConfigError(
                    f"layer {i} outputs {a.out_dim} features but layer {i + 1} "
                    f"expects {b.in_dim}"
                )
        self.layers = layers
        self.step = 0
        self._inputs: list[np.ndarray] | None = None
        self._preacts: list[np.ndarray] | None = None

    @classmethod
    def build(cls, dims: list[int], rng: np.random.Generator) -> "Mlp":
        """Build an MLP with layer sizes ``dims``, e.g. ``[2, 32, 32, 1]`` is three layers."""
        if len(dims) < 2:
            raise ConfigError("dims needs an input and an output size")
        return cls([LinearLayer.init(i, o, rng) for i, o in zip(dims[:-1], dims[1:])])

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [layer.out_dim for layer in self.layers]

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        return mlp_forward(self, batch)

    def params(self):
        for layer in self.layers:
            yield from layer.params()

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.grad_weight.fill(0.0)
            layer.grad_bias.fill(0.0)

    def reset_optimizer(self) -> None:
        self.step = 0
        for _, _, m, v in self.params():
            m.fill(0.0)
            v.fill(0.0)

    def copy(self) -> "Mlp":
        clone = Mlp([_copy_layer(layer) for layer in self.layers])
        clone.step = self.step
        return clone


def _copy_layer(layer: LinearLayer) -> LinearLayer:
    new = LinearLayer(layer.weight.copy(), layer.bias.copy())
    for dst, src in zip(new.params(), layer.params()):
        for d, s in zip(dst[1:], src[1:]):
            d[...] = s
    return new


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def mlp_forward(net: Mlp, batch: np.ndarray) -> np.ndarray:
    """Run ``batch`` through ``net`` and cache what the backward pass needs."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ConfigError(f"expected a (n, {net.in_dim}) batch, got shape {x.shape}")
    inputs, preacts = [], []
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        inputs.append(x)
        z = x @ layer.weight.T + layer.bias
        preacts.append(z)
        x = z if i == last else relu(z)
    net._inputs, net._preacts = inputs, preacts
    return x


def mlp_backward(net: Mlp, grad_output: np.ndarray) -> np.ndarray:
    """Accumulate parameter gradients and return the gradient w.r.t. the input batch."""
    if net._inputs is None:
        raise UsageError("mlp_backward called before mlp_forward")
    g = np.asarray(grad_output, dtype=np.float64)
    n = net._inputs[0].shape[0]
    if g.shape != (n, net.out_dim):
        raise UsageError(f"grad_output shape {g.shape} != ({n}, {net.out_dim})")
    last = len(net.layers) - 1
    for i in range(last, -1, -1):
        layer = net.layers[i]
        if i != last:
            # subgradient of ReLU at exactly 0 is taken as 0
            g = g * (net._preacts[i] > 0.0)
        layer.grad_weight += g.T @ net._inputs[i]
        layer.grad_bias += g.sum(axis=0)
        g = g @ layer.weight
    return g


def adamw_step(
    net: Mlp,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> None:
    """One AdamW update (decoupled weight decay) followed by zeroing the gradients."""
    net.step += 1
    t = net.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p, g, m, v in net.params():
        p *= 1.0 - lr * weight_decay
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        g.fill(0.0)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean of squared elementwise differences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise UsageError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))
