"""Small dense-network engine in double precision.

Layers store weights as ``(out_dim, in_dim)`` and compute
``activation(x @ W.T + b)`` row-wise.  Gradients are exact reverse mode;
``finite_diff_check`` compares them against central differences.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidEpsilon,
    MissingCache,
    NonFiniteGradient,
    NumericalWarning,
    ValidationError,
)

CHECKPOINT_VERSION = 1
NORM_FLOOR = 1e-12
RHO_HAT_CLAMP = 1e-7


class Activation(str, enum.Enum):
    RELU = "relu"
    LINEAR = "linear"


def _activate(pre, activation):
    if activation is Activation.RELU:
        return np.maximum(pre, 0.0)
    return pre


def _activation_grad(pre, grad_out, activation):
    if activation is Activation.RELU:
        # subgradient at exactly 0 is 0
        return grad_out * (pre > 0.0)
    return grad_out


@dataclass(eq=False)
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.LINEAR

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        self.activation = Activation(self.activation)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DimensionMismatch(
                f"weights {self.weights.shape} and bias {self.bias.shape} disagree")

    @classmethod
    def init(cls, in_dim: int, out_dim: int, activation=Activation.RELU,
             rng: np.random.Generator | None = None) -> "DenseLayer":
        """Glorot-uniform weights, zero bias."""
        rng = np.random.default_rng() if rng is None else rng
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        return cls(rng.uniform(-limit, limit, size=(out_dim, in_dim)),
                   np.zeros(out_dim), activation)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def parameters(self) -> list:
        return [self.weights, self.bias]

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise DimensionMismatch(f"layer expects {self.in_dim} inputs, got {x.shape[-1]}")
        return x

    def __call__(self, x) -> np.ndarray:
        x = self._check(x)
        return _activate(x @ self.weights.T + self.bias, self.activation)

    def forward_cached(self, x):
        x = self._check(x)
        pre = x @ self.weights.T + self.bias
        return _activate(pre, self.activation), (x, pre)

    def backward(self, cache, grad_out):
        """Return ``(grad_input, grad_weights, grad_bias)``."""
        if cache is None:
            raise MissingCache("backward called without a cached forward pass")
        x, pre = cache
        g = _activation_grad(pre, grad_out, self.activation)
        return g @ self.weights, g.T @ x, g.sum(axis=0)

    def to_dict(self) -> dict:
        return {"in_dim": self.in_dim, "out_dim": self.out_dim,
                "activation": self.activation.value,
                "weights": self.weights.tolist(), "bias": self.bias.tolist()}

    @classmethod
    def from_dict(cls, d) -> "DenseLayer":
        layer = cls(np.array(d["weights"], dtype=np.float64).reshape(d["out_dim"], d["in_dim"]),
                    np.array(d["bias"], dtype=np.float64), Activation(d["activation"]))
        return layer


def forward(layer: DenseLayer, batch) -> np.ndarray:
    return layer(batch)


def quadratic_loss(y, target=None):
    """``0.5 * mean_rows ||y - target||^2`` and its gradient."""
    y = np.atleast_2d(y)
    diff = y if target is None else y - target
    n = y.shape[0]
    return 0.5 * float(np.sum(diff * diff)) / n, diff / n


class DenseStack:
    """Sequential stack of dense layers with a cached forward pass."""

    def __init__(self, layers, loss: Callable = quadratic_loss):
        self.layers = list(layers)
        self.loss = loss
        self._caches = None
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionMismatch(f"layer chain {a.out_dim} -> {b.in_dim}")

    @classmethod
    def build(cls, dims, activations=None, rng=None, loss=quadratic_loss):
        rng = np.random.default_rng(0) if rng is None else rng
        if activations is None:
            activations = [Activation.RELU] * (len(dims) - 2) + [Activation.LINEAR]
        return cls([DenseLayer.init(i, o, a, rng)
                    for i, o, a in zip(dims[:-1], dims[1:], activations)], loss)

    def parameters(self) -> list:
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def forward(self, x, cache: bool = True):
        caches = []
        for layer in self.layers:
            x, c = layer.forward_cached(x)
            caches.append(c)
        self._caches = caches if cache else None
        return x

    def backward(self, loss_grad) -> list:
        if self._caches is None:
            raise MissingCache("call forward(..., cache=True) before backward")
        grads = []
        g = loss_grad
        for layer, cache in zip(reversed(self.layers), reversed(self._caches)):
            g, gw, gb = layer.backward(cache, g)
            grads.append(gb)
            grads.append(gw)
        return grads[::-1]

    def loss_and_grad(self, batch):
        y = self.forward(batch)
        value, g = self.loss(y)
        return value, self.backward(g)


def backward(net: DenseStack, batch, loss_grad) -> list:
    """Gradients for every parameter of ``net`` given dL/d(output).

    ``batch`` must be the input of the most recent cached forward pass.
    """
    return net.backward(loss_grad)


def cosine_loss(x, x_hat):
    """``1 - cos(x, x_hat)``, averaged over rows for a batch.

    Returns ``(loss, d loss / d x_hat)``.  Norms below 1e-12 are clamped to
    1e-12 (and a ``NumericalWarning`` is emitted).
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise DimensionMismatch(f"shapes differ: {x.shape} vs {x_hat.shape}")
    single = x.ndim == 1
    x2, y2 = np.atleast_2d(x), np.atleast_2d(x_hat)
    nx = np.linalg.norm(x2, axis=1)
    ny = np.linalg.norm(y2, axis=1)
    clamped = (nx < NORM_FLOOR) | (ny < NORM_FLOOR)
    if clamped.any():
        warnings.warn(f"{int(clamped.sum())} row(s) with norm < {NORM_FLOOR}; clamped",
                      NumericalWarning, stacklevel=2)
    nx = np.maximum(nx, NORM_FLOOR)
    ny_c = np.maximum(ny, NORM_FLOOR)
    dot = np.einsum("ij,ij->i", x2, y2)
    cos = dot / (nx * ny_c)
    n = x2.shape[0]
    dcos = x2 / (nx * ny_c)[:, None]
    # clamped denominators are treated as constants
    free = ny >= NORM_FLOOR
    dcos[free] -= (cos[free] / ny_c[free] ** 2)[:, None] * y2[free]
    grad = -dcos / n
    loss = float(np.mean(1.0 - cos))
    return loss, (grad[0] if single else grad)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def kl_units(latent_batch, rho: float = 0.05) -> np.ndarray:
    """Per-unit terms of ``kl_sparsity`` (no gradient)."""
    z = np.atleast_2d(np.asarray(latent_batch, dtype=np.float64))
    rho_hat = np.clip(sigmoid(z).mean(axis=0), RHO_HAT_CLAMP, 1.0 - RHO_HAT_CLAMP)
    return rho * np.log(rho / rho_hat) + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - rho_hat))


def cosine_terms(x, x_hat) -> np.ndarray:
    """Per-row ``1 - cos(x, x_hat)`` with the same norm clamp as ``cosine_loss``."""
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y2 = np.atleast_2d(np.asarray(x_hat, dtype=np.float64))
    nx = np.maximum(np.linalg.norm(x2, axis=1), NORM_FLOOR)
    ny = np.maximum(np.linalg.norm(y2, axis=1), NORM_FLOOR)
    return 1.0 - np.einsum("ij,ij->i", x2, y2) / (nx * ny)


def kl_sparsity(latent_batch, rho: float = 0.05):
    """Bernoulli sparsity KL between target ``rho`` and mean unit activity.

    Activations are squashed with the logistic map, averaged over the batch
    to ``rho_hat`` (clamped into [1e-7, 1 - 1e-7]) and summed over units.
    Returns ``(value, d value / d latent_batch)``.
    """
    if not 0.0 < rho < 1.0:
        raise ValidationError(f"rho must lie in (0, 1), got {rho}")
    z = np.atleast_2d(np.asarray(latent_batch, dtype=np.float64))
    s = sigmoid(z)
    raw = s.mean(axis=0)
    rho_hat = np.clip(raw, RHO_HAT_CLAMP, 1.0 - RHO_HAT_CLAMP)
    value = float(np.sum(kl_units(latent_batch, rho)))
    d_rho_hat = -rho / rho_hat + (1.0 - rho) / (1.0 - rho_hat)
    d_rho_hat = np.where(raw == rho_hat, d_rho_hat, 0.0)
    grad = d_rho_hat[None, :] * s * (1.0 - s) / z.shape[0]
    return value, grad.reshape(np.shape(latent_batch))


@dataclass
class LossBreakdown:
    cosine_term: float
    kl_term: float
    kl_weight: float

    @property
    def total(self) -> float:
        return self.cosine_term + self.kl_weight * self.kl_term


@dataclass(eq=False)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros_like(cls, param) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), 0)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState,
              learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8) -> np.ndarray:
    """One bias-corrected Adam update, applied to ``param`` in place."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != param.shape or state.first_moment.shape != param.shape:
        raise DimensionMismatch(f"gradient {grad.shape} vs parameter {param.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient contains NaN or Inf")
    state.step_count += 1
    t = state.step_count
    state.first_moment *= beta1
    state.first_moment += (1.0 - beta1) * grad
    state.second_moment *= beta2
    state.second_moment += (1.0 - beta2) * grad * grad
    m_hat = state.first_moment / (1.0 - beta1 ** t)
    v_hat = state.second_moment / (1.0 - beta2 ** t)
    param -= learning_rate * m_hat / (np.sqrt(v_hat) + epsilon)
    return param


@dataclass
class Adam:
    """Adam over many tensors; state is keyed by tensor identity.

    A tensor shared between several modules therefore has a single moment
    pair and step count, advanced every time any owner steps it.
    """
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    states: dict = field(default_factory=dict)

    def step(self, params, grads) -> None:
        if len(params) != len(grads):
            raise DimensionMismatch("one gradient per parameter is required")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient("gradient contains NaN or Inf")
        for p, g in zip(params, grads):
            state = self.states.get(id(p))
            if state is None:
                state = self.states[id(p)] = AdamState.zeros_like(p)
            adam_step(p, g, state, self.learning_rate, self.beta1, self.beta2, self.epsilon)


def finite_diff_check(net, batch, epsilon: float = 1e-6, floor: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``net`` must expose ``parameters()`` and ``loss_and_grad(batch)``.  The
    relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``; the
    floor keeps near-zero gradients from dividing round-off by ~0.

    When ``net`` also has ``loss_terms(batch)`` (an array summing to the
    loss) the difference is taken term by term.  Differencing the total
    loses about ``ulp(loss) / epsilon`` to cancellation, which for a loss
    near 2 is already ~2e-10 and comparable to ``floor * 1e-5``.
    """
    if not epsilon > 0.0:
        raise InvalidEpsilon(f"epsilon must be positive, got {epsilon}")
    terms = getattr(net, "loss_terms", None)
    _, analytic = net.loss_and_grad(batch)
    analytic = [np.array(g, copy=True) for g in analytic]
    worst = 0.0
    for param, grad in zip(net.parameters(), analytic):
        flat = param.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            plus = terms(batch) if terms else net.loss_and_grad(batch)[0]
            flat[i] = orig - epsilon
            minus = terms(batch) if terms else net.loss_and_grad(batch)[0]
            flat[i] = orig
            numeric = math.fsum(np.atleast_1d(plus - minus)) / (2.0 * epsilon)
            err = abs(gflat[i] - numeric) / max(abs(gflat[i]), abs(numeric), floor)
            worst = max(worst, err)
    return worst
