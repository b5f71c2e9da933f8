"""Small dense-network stack in numpy.

Every network in the package (the four GDAN parts and the logistic
regressions) is an :class:`Mlp` of :class:`Dense` layers.  Layers cache
their forward intermediates so that ``backward`` can be called one or
more times afterwards; each call overwrites the parameter gradients.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateDataError, ShapeError, StateError

ACTIVATIONS = ("identity", "relu", "leaky_relu", "sigmoid", "tanh", "softmax")
LEAKY_SLOPE = 0.2
PROB_EPS = 1e-7

# activations with a kink at zero; grad_check keeps inputs away from it
_KINKED = ("relu", "leaky_relu")


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "softmax":
        return softmax(z)
    raise ValueError(f"unknown activation {kind!r}")


def _activation_backward(kind: str, z: np.ndarray, a: np.ndarray, grad_a: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return grad_a
    if kind == "relu":
        return grad_a * (z > 0)
    if kind == "leaky_relu":
        return grad_a * np.where(z > 0, 1.0, LEAKY_SLOPE)
    if kind == "sigmoid":
        return grad_a * a * (1.0 - a)
    if kind == "tanh":
        return grad_a * (1.0 - a * a)
    if kind == "softmax":
        return a * (grad_a - np.sum(grad_a * a, axis=1, keepdims=True))
    raise ValueError(f"unknown activation {kind!r}")


def as_matrix(x, name: str = "input") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


class Dense:
    """Affine map followed by an elementwise (or row-wise) activation.

    ``weights`` has shape (out, in); the forward pass computes
    ``act(x @ weights.T + bias)``.
    """

    def __init__(self, n_in: int, n_out: int, activation: str = "identity",
                 rng: np.random.Generator | None = None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = np.random.default_rng() if rng is None else rng
        limit = np.sqrt(6.0 / (n_in + n_out))
        self.weights = rng.uniform(-limit, limit, size=(n_out, n_in))
        self.bias = np.zeros(n_out)
        self.activation = activation
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self._cache = None

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.n_in:
            raise ShapeError(f"layer expects {self.n_in} input columns, got {x.shape[1]}")
        z = x @ self.weights.T + self.bias
        a = _activate(self.activation, z)
        self._cache = (x, z, a)
        return a

    def backward(self, grad_out: np.ndarray, pre_activation: bool = False) -> np.ndarray:
        """Backpropagate ``grad_out`` and return the gradient w.r.t. the layer input.

        With ``pre_activation=True`` the incoming gradient is taken to be with
        respect to ``z`` already (fused softmax/cross-entropy).
        """
        if self._cache is None:
            raise StateError("backward called before forward")
        x, z, a = self._cache
        if grad_out.shape != z.shape:
            raise ShapeError(f"upstream gradient shape {grad_out.shape} != output shape {z.shape}")
        gz = grad_out if pre_activation else _activation_backward(self.activation, z, a, grad_out)
        self.grad_weights = gz.T @ x
        self.grad_bias = gz.sum(axis=0)
        return gz @ self.weights

    def params(self) -> list[np.ndarray]:
        return [self.weights, self.bias]

    def grads(self) -> list[np.ndarray]:
        return [self.grad_weights, self.grad_bias]


class Mlp:
    """Ordered stack of :class:`Dense` layers."""

    def __init__(self, layers: Sequence[Dense]):
        layers = list(layers)
        if not layers:
            raise ValueError("an Mlp needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.n_out != nxt.n_in:
                raise ShapeError(f"layer widths do not chain: {prev.n_out} -> {nxt.n_in}")
        self.layers = layers

    @classmethod
    def build(cls, sizes: Sequence[int], hidden: str = "leaky_relu", output: str = "identity",
              rng: np.random.Generator | None = None) -> "Mlp":
        """``sizes = [in, h1, ..., out]``; every layer but the last uses ``hidden``."""
        if len(sizes) < 2:
            raise ValueError("sizes needs an input and an output width")
        rng = np.random.default_rng() if rng is None else rng
        n = len(sizes) - 1
        layers = [Dense(sizes[i], sizes[i + 1], hidden if i < n - 1 else output, rng)
                  for i in range(n)]
        return cls(layers)

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def forward(self, x) -> np.ndarray:
        x = as_matrix(x)
        if x.shape[1] != self.n_in:
            raise ShapeError(f"network expects {self.n_in} input columns, got {x.shape[1]}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, upstream: np.ndarray, pre_activation: bool = False) -> np.ndarray:
        g = self.layers[-1].backward(upstream, pre_activation=pre_activation)
        for layer in reversed(self.layers[:-1]):
            g = layer.backward(g)
        return g

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def grads(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads()]

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.grad_weights = np.zeros_like(layer.weights)
            layer.grad_bias = np.zeros_like(layer.bias)

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.layers = []
        for layer in self.layers:
            new = Dense.__new__(Dense)
            new.weights = layer.weights.copy()
            new.bias = layer.bias.copy()
            new.activation = layer.activation
            new.grad_weights = np.zeros_like(layer.weights)
            new.grad_bias = np.zeros_like(layer.bias)
            new._cache = None
            clone.layers.append(new)
        return clone

    def state(self) -> list[dict]:
        return [{"weights": l.weights.copy(), "bias": l.bias.copy(), "activation": l.activation}
                for l in self.layers]

    @classmethod
    def from_state(cls, state: Iterable[dict]) -> "Mlp":
        layers = []
        for entry in state:
            w = np.asarray(entry["weights"], dtype=np.float64)
            layer = Dense(w.shape[1], w.shape[0], str(entry["activation"]), np.random.default_rng(0))
            layer.weights = w.copy()
            layer.bias = np.asarray(entry["bias"], dtype=np.float64).copy()
            layers.append(layer)
        return cls(layers)


# -- losses -----------------------------------------------------------------

def bce_loss(predicted, target) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient w.r.t. ``predicted``."""
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"predicted shape {p.shape} != target shape {t.shape}")
    n = p.size
    if n == 0:
        return 0.0, np.zeros_like(p)
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    loss = -np.mean(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc))
    grad = (-t / pc + (1.0 - t) / (1.0 - pc)) / n
    return float(loss), grad


def ce_loss(predicted, target) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy of softmax rows.

    The returned gradient is with respect to the softmax *logits*
    (``(p - onehot) / n``), so callers backpropagate it with
    ``pre_activation=True``.
    """
    p = as_matrix(predicted, "predicted")
    idx = np.asarray(target)
    if idx.ndim != 1 or idx.shape[0] != p.shape[0]:
        raise ShapeError(f"target length {idx.shape} does not match {p.shape[0]} rows")
    k = p.shape[1]
    if idx.size and (idx.min() < 0 or idx.max() >= k):
        raise ValueError(f"class index out of range [0, {k})")
    idx = idx.astype(np.int64)
    n = p.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(p)
    rows = np.arange(n)
    loss = -np.mean(np.log(np.clip(p[rows, idx], PROB_EPS, 1.0)))
    grad = p.copy()
    grad[rows, idx] -= 1.0
    return float(loss), grad / n


def l1_loss(a, b) -> tuple[float, np.ndarray]:
    """Mean absolute difference over every element, and its subgradient w.r.t. ``a``."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0, np.zeros_like(a)
    diff = a - b
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


# -- optimizers ---------------------------------------------------------------

class SGD:
    kind = "sgd"

    def __init__(self, learning_rate: float = 0.01):
        self.learning_rate = learning_rate

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        _check_pairs(params, grads)
        for p, g in zip(params, grads):
            p -= self.learning_rate * g


class Adam:
    kind = "adam"

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        _check_pairs(params, grads)
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(kind: str, learning_rate: float):
    if kind == "adam":
        return Adam(learning_rate)
    if kind == "sgd":
        return SGD(learning_rate)
    raise ValueError(f"unknown optimizer {kind!r}")


def optimizer_step(opt, net: Mlp, grads: Sequence[np.ndarray] | None = None) -> Mlp:
    """Apply one update to ``net`` in place (using its stored gradients by default)."""
    opt.step(net.params(), net.grads() if grads is None else grads)
    return net


def _check_pairs(params, grads) -> None:
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")


# -- verification ---------------------------------------------------------------

LossFn = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


def grad_check(net: Mlp, x, loss_fn: LossFn, pre_activation: bool = False, step: float = 1e-5,
               kink_margin: float = 1e-3, rng: np.random.Generator | None = None) -> float:
    """Max relative error between backprop and central finite differences.

    ``loss_fn`` maps the network output to ``(loss, grad)``; when
    ``pre_activation`` is set the gradient is w.r.t. the last layer's logits.
    Inputs that land a relu unit within ``kink_margin`` of zero are jittered.
    Gradients below 1e-6 are compared in absolute terms, since central
    differences carry roughly 1e-11 of rounding noise.
    """
    x = as_matrix(x).copy()
    rng = np.random.default_rng(0) if rng is None else rng
    for _ in range(50):
        net.forward(x)
        near = [np.abs(l._cache[1]).min() for l in net.layers if l.activation in _KINKED]
        if not near or min(near) > kink_margin:
            break
        x = x + rng.normal(scale=0.05, size=x.shape)
    else:
        raise DegenerateDataError("could not move inputs away from activation kinks")

    out = net.forward(x)
    _, grad = loss_fn(out)
    net.backward(grad, pre_activation=pre_activation)
    analytic = [g.copy() for g in net.grads()]

    worst = 0.0
    for p, ga in zip(net.params(), analytic):
        flat = p.reshape(-1)
        ga = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up, _ = loss_fn(net.forward(x))
            flat[i] = orig - step
            down, _ = loss_fn(net.forward(x))
            flat[i] = orig
            num = (up - down) / (2.0 * step)
            denom = max(abs(ga[i]), abs(num), 1e-6)
            worst = max(worst, abs(ga[i] - num) / denom)
    net.forward(x)
    return worst
