"""Dense heteroscedastic regression network.

A ReLU multilayer perceptron with two scalar outputs: a mean squashed by a
scaled tanh and a variance obtained through softplus plus a small floor.
Training minimizes the Gaussian negative log-likelihood with Adam.

All heavy lifting (batched forward/backward passes, Adam updates, full
epochs) is delegated to :mod:`surge_al._backend`, which picks the compiled
kernels when they are available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ._backend import kernels

DEFAULT_VARIANCE_FLOOR = 1e-6


class ArchitectureError(ValueError):
    """Raised for a network with a zero-sized or malformed layer."""


class ShapeError(ValueError):
    """Raised when array shapes do not line up."""


class DomainError(ValueError):
    """Raised when a value lies outside the domain of a function."""


@dataclass(frozen=True)
class Architecture:
    input_dim: int = 5
    hidden_dims: tuple[int, ...] = (256, 256, 256)
    tanh_scale: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim <= 0 or not self.hidden_dims or any(h <= 0 for h in self.hidden_dims):
            raise ArchitectureError(
                f"layer sizes must be positive, got input_dim={self.input_dim}, "
                f"hidden_dims={list(self.hidden_dims)}"
            )
        if not self.tanh_scale > 0:
            raise ArchitectureError("tanh_scale must be positive")

    @property
    def sizes(self) -> tuple[int, ...]:
        """Layer widths from input to the two-unit output layer."""
        return (self.input_dim, *self.hidden_dims, 2)

    @property
    def n_params(self) -> int:
        return kernels.param_count(self.sizes)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "tanh_scale": self.tanh_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(int(d["input_dim"]), tuple(d["hidden_dims"]), float(d["tanh_scale"]))


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray  # (out, in) view
    biases: np.ndarray   # (out,) view


@dataclass
class NetworkParams:
    """Weights of one network stored in a single flat vector.

    ``layers`` and ``head`` return views into ``theta``, so writing through
    them modifies the network.  Gradients use the same container.
    """

    arch: Architecture
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.arch.n_params,):
            raise ShapeError(
                f"expected {self.arch.n_params} parameters, got shape {self.theta.shape}"
            )

    def _views(self) -> list[Layer]:
        sizes = self.arch.sizes
        out = []
        off = 0
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            wt = self.theta[off:off + n_in * n_out].reshape(n_in, n_out)
            off += n_in * n_out
            out.append(Layer(wt.T, self.theta[off:off + n_out]))
            off += n_out
        return out

    @property
    def layers(self) -> list[Layer]:
        """Hidden layers, input side first."""
        return self._views()[:-1]

    @property
    def head(self) -> dict[str, np.ndarray]:
        last = self._views()[-1]
        return {
            "mean_weights": last.weights[0],
            "mean_bias": last.biases[0:1],
            "var_weights": last.weights[1],
            "var_bias": last.biases[1:2],
        }

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, self.theta.copy())

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(self.arch, np.zeros_like(self.theta))


@dataclass(frozen=True)
class GaussianPrediction:
    mean: float
    variance: float


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 1e-3
    decay_factor: float = 0.99
    decay_start_epoch: int = 10
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    variance_floor: float = DEFAULT_VARIANCE_FLOOR

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not self.variance_floor > 0:
            raise ValueError("variance_floor must be positive")
        if self.decay_start_epoch < 0:
            raise ValueError("decay_start_epoch must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.step_count < 0:
            raise ValueError("step_count must be non-negative")

    @classmethod
    def zeros(cls, params: NetworkParams, **kwargs) -> "AdamState":
        return cls(np.zeros_like(params.theta), np.zeros_like(params.theta), **kwargs)

    def copy(self) -> "AdamState":
        return replace(self, first_moment=self.first_moment.copy(),
                       second_moment=self.second_moment.copy())


def init_network(arch: Architecture, seed: int) -> NetworkParams:
    """He-initialized weights (variance 2/fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    parts = []
    sizes = arch.sizes
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = rng.normal(0.0, math.sqrt(2.0 / n_in), size=(n_out, n_in))
        parts.append(w.T.ravel())
        parts.append(np.zeros(n_out))
    return NetworkParams(arch, np.concatenate(parts))


def _as_batch(params: NetworkParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.arch.input_dim:
        raise ShapeError(
            f"expected inputs of shape (n, {params.arch.input_dim}), got {X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise DomainError("inputs must be finite")
    return X


def predict_batch(params: NetworkParams, X, variance_floor: float = DEFAULT_VARIANCE_FLOOR):
    """Vectorized forward pass; returns ``(means, variances)`` arrays."""
    X = _as_batch(params, X)
    return kernels.predict(params.theta, params.arch.sizes, X,
                           params.arch.tanh_scale, variance_floor)


def forward(params: NetworkParams, x, variance_floor: float = DEFAULT_VARIANCE_FLOOR) -> GaussianPrediction:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.arch.input_dim,):
        raise ShapeError(f"expected input of length {params.arch.input_dim}, got shape {x.shape}")
    mean, var = predict_batch(params, x[None, :], variance_floor)
    return GaussianPrediction(float(mean[0]), float(var[0]))


def gaussian_nll(pred: GaussianPrediction, y: float) -> float:
    """Gaussian negative log-likelihood without the constant 0.5*ln(2*pi)."""
    if not pred.variance > 0:
        raise DomainError(f"variance must be positive, got {pred.variance}")
    r = y - pred.mean
    return 0.5 * math.log(pred.variance) + r * r / (2.0 * pred.variance)


def loss_and_grad(params: NetworkParams, X, y, variance_floor: float = DEFAULT_VARIANCE_FLOOR):
    """Mean NLL over the batch and its gradient."""
    X = _as_batch(params, X)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("batch must not be empty")
    if y.shape != (X.shape[0],):
        raise ShapeError(f"targets of shape {y.shape} do not match {X.shape[0]} inputs")
    grads = params.zeros_like()
    loss = kernels.loss_grad(params.theta, params.arch.sizes, X, y,
                             params.arch.tanh_scale, variance_floor, grads.theta)
    return loss, grads


def backward(params: NetworkParams, X, y, variance_floor: float = DEFAULT_VARIANCE_FLOOR) -> NetworkParams:
    """Gradient of the batch-mean NLL with respect to every parameter."""
    return loss_and_grad(params, X, y, variance_floor)[1]


def adam_step(params: NetworkParams, state: AdamState, grads: NetworkParams, lr: float):
    """Return updated copies of ``params`` and ``state`` after one Adam step."""
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    if grads.theta.shape != params.theta.shape or state.first_moment.shape != params.theta.shape:
        raise ShapeError("parameters, gradients and optimizer state differ in shape")
    new_params = params.copy()
    new_state = state.copy()
    new_state.step_count += 1
    kernels.adam_update(new_params.theta, grads.theta, new_state.first_moment,
                        new_state.second_moment, new_state.step_count, lr,
                        state.beta1, state.beta2, state.epsilon)
    return new_params, new_state


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Constant rate through ``decay_start_epoch``, then geometric decay."""
    if epoch < 1:
        raise ValueError("epochs are numbered from 1")
    if epoch <= config.decay_start_epoch:
        return config.base_lr
    return config.base_lr * config.decay_factor ** (epoch - config.decay_start_epoch)


def train(params: NetworkParams, X, y, config: TrainConfig):
    """Train a copy of ``params`` for ``config.epochs`` epochs.

    Each epoch visits the samples in a fresh permutation drawn from a stream
    seeded by ``config.seed``; Adam starts from zero moments.  Returns the
    trained parameters and the per-epoch mean loss.
    """
    X = _as_batch(params, X)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if y.shape != (n,):
        raise ShapeError(f"targets of shape {y.shape} do not match {n} inputs")
    if not np.all(np.isfinite(y)):
        raise DomainError("targets must be finite")

    out = params.copy()
    state = AdamState.zeros(out)
    rng = np.random.default_rng([config.seed, 1])
    sizes = out.arch.sizes
    history = []
    t = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        loss, t = kernels.train_epoch(
            out.theta, state.first_moment, state.second_moment, t, sizes, X, y,
            order, config.batch_size, lr_schedule(epoch, config),
            state.beta1, state.beta2, state.epsilon,
            out.arch.tanh_scale, config.variance_floor,
        )
        history.append(loss)
    return out, history
