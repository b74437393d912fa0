"""Local binary classifier and the per-hospital training loop.

Two model kinds share one flat parameter layout convention:

* ``logistic``: ``[w_1..w_d, b]`` (``d + 1`` parameters).
* ``mlp``: one tanh hidden layer, laid out as ``W1`` (``d x h``, row-major),
  ``b1`` (``h``), ``W2`` (``h``), ``b2`` (1), i.e. ``d*h + h + h + 1``.

Both output a single logit; the loss is mean binary cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import ArithmeticDomainError, UsageError
from .params import WeightVector


@dataclass(frozen=True)
class ModelSpec:
    kind: Literal["logistic", "mlp"] = "logistic"
    input_dim: int = 64
    hidden_dim: int = 16
    classes: int = 2

    def __post_init__(self) -> None:
        if self.kind not in ("logistic", "mlp"):
            raise UsageError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            raise UsageError("input_dim must be positive")
        if self.kind == "mlp" and self.hidden_dim < 1:
            raise UsageError("hidden_dim must be positive for mlp")
        if self.classes != 2:
            raise UsageError("only binary classification is supported")

    @property
    def n_params(self) -> int:
        d, h = self.input_dim, self.hidden_dim
        if self.kind == "logistic":
            return d + 1
        return d * h + h + h + 1


@dataclass(frozen=True)
class OptimizerSpec:
    """Local optimizer settings.

    ``persist_state`` keeps Adam moments and step count per client across
    rounds instead of resetting them when a new global model arrives.
    """

    kind: Literal["sgd", "adam"] = "adam"
    eta: float = 0.009
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    persist_state: bool = True

    def __post_init__(self) -> None:
        if self.kind not in ("sgd", "adam"):
            raise UsageError(f"unknown optimizer kind {self.kind!r}")
        if not self.eta >= 0:
            # eta == 0 is accepted as a "frozen training" switch for tests.
            raise UsageError("eta must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise UsageError("invalid Adam hyper-parameters")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "AdamState":
        return cls(np.zeros(dim), np.zeros(dim), 0)


def init_weights(spec: ModelSpec, seed: int) -> WeightVector:
    """Draw initial parameters.

    Weight matrices are i.i.d. ``N(0, 1/fan_in)``; biases start at zero. The
    draw depends only on ``(spec, seed)``.
    """
    rng = np.random.default_rng(seed)
    d, h = spec.input_dim, spec.hidden_dim
    if spec.kind == "logistic":
        w = rng.normal(0.0, 1.0 / np.sqrt(d), size=d)
        return np.concatenate([w, [0.0]])
    w1 = rng.normal(0.0, 1.0 / np.sqrt(d), size=d * h)
    w2 = rng.normal(0.0, 1.0 / np.sqrt(h), size=h)
    return np.concatenate([w1, np.zeros(h), w2, [0.0]])


def _unpack_mlp(spec: ModelSpec, w: WeightVector):
    d, h = spec.input_dim, spec.hidden_dim
    o = 0
    W1 = w[o:o + d * h].reshape(d, h)
    o += d * h
    b1 = w[o:o + h]
    o += h
    W2 = w[o:o + h]
    o += h
    return W1, b1, W2, w[o]


def _check(spec: ModelSpec, w: WeightVector, X: np.ndarray) -> None:
    if len(w) != spec.n_params:
        raise UsageError(f"expected {spec.n_params} parameters, got {len(w)}")
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise UsageError(
            f"features must have shape (n, {spec.input_dim}), got {X.shape}"
        )


def logits(spec: ModelSpec, w: WeightVector, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    _check(spec, w, X)
    if spec.kind == "logistic":
        z = X @ w[:-1] + w[-1]
    else:
        W1, b1, W2, b2 = _unpack_mlp(spec, w)
        z = np.tanh(X @ W1 + b1) @ W2 + b2
    if not np.all(np.isfinite(z)):
        raise ArithmeticDomainError("non-finite logit")
    return z


def predict_proba(spec: ModelSpec, w: WeightVector, X: np.ndarray) -> np.ndarray:
    z = logits(spec, w, X)
    # Stable sigmoid for both signs of z.
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def predict(spec: ModelSpec, w: WeightVector, X: np.ndarray) -> np.ndarray:
    return (predict_proba(spec, w, X) >= 0.5).astype(np.int64)


def loss(spec: ModelSpec, w: WeightVector, X: np.ndarray, y: np.ndarray) -> float:
    z = logits(spec, w, X)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def loss_and_grad(
    spec: ModelSpec, w: WeightVector, X: np.ndarray, y: np.ndarray
) -> tuple[float, WeightVector]:
    """Mean binary cross-entropy over the batch and its gradient w.r.t. ``w``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise UsageError("batch must be nonempty")
    if len(y) != len(X):
        raise UsageError("features and labels differ in length")
    _check(spec, w, X)
    n = len(X)

    if spec.kind == "logistic":
        z = X @ w[:-1] + w[-1]
        hidden = None
    else:
        W1, b1, W2, b2 = _unpack_mlp(spec, w)
        hidden = np.tanh(X @ W1 + b1)
        z = hidden @ W2 + b2
    if not np.all(np.isfinite(z)):
        raise ArithmeticDomainError("non-finite logit")

    value = float(np.mean(np.logaddexp(0.0, z) - y * z))
    ez = np.exp(-np.abs(z))
    p = np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))
    dz = (p - y) / n

    if spec.kind == "logistic":
        grad = np.concatenate([X.T @ dz, [dz.sum()]])
    else:
        dW2 = hidden.T @ dz
        db2 = dz.sum()
        dpre = np.outer(dz, W2) * (1.0 - hidden**2)
        dW1 = X.T @ dpre
        db1 = dpre.sum(axis=0)
        grad = np.concatenate([dW1.ravel(), db1, dW2, [db2]])
    return value, grad


@dataclass
class ClientOptimizer:
    """Per-client optimizer wrapper holding any state that outlives a round."""

    spec: OptimizerSpec
    dim: int
    state: AdamState | None = field(default=None)

    def begin_round(self) -> None:
        if self.spec.kind == "adam" and (
            self.state is None or not self.spec.persist_state
        ):
            self.state = AdamState.zeros(self.dim)

    def step(self, w: WeightVector, grad: WeightVector) -> WeightVector:
        eta = self.spec.eta
        if self.spec.kind == "sgd":
            return w - eta * grad
        s = self.state
        b1, b2 = self.spec.beta1, self.spec.beta2
        s.step += 1
        s.m = b1 * s.m + (1.0 - b1) * grad
        s.v = b2 * s.v + (1.0 - b2) * grad * grad
        m_hat = s.m / (1.0 - b1**s.step)
        v_hat = s.v / (1.0 - b2**s.step)
        return w - eta * m_hat / (np.sqrt(v_hat) + self.spec.eps)


def local_training(
    spec: ModelSpec,
    X: np.ndarray,
    y: np.ndarray,
    w_t: WeightVector,
    opt: OptimizerSpec | ClientOptimizer,
    epochs: int,
    batch_size: int,
    rng: np.random.Generator,
) -> WeightVector:
    """Run ``epochs`` shuffled mini-batch passes starting from ``w_t``.

    Each pass draws a fresh permutation from ``rng`` and cuts it into
    consecutive batches of ``batch_size`` (the last one may be shorter). Passing
    a bare :class:`OptimizerSpec` uses fresh optimizer state; pass a
    :class:`ClientOptimizer` to carry Adam moments between rounds.
    """
    if epochs < 1 or batch_size < 1:
        raise UsageError("epochs and batch_size must be >= 1")
    n = len(X)
    if n == 0:
        raise UsageError("client has no training data")
    if isinstance(opt, OptimizerSpec):
        opt = ClientOptimizer(opt, len(w_t))
    opt.begin_round()

    w = np.array(w_t, dtype=np.float64, copy=True)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            _, g = loss_and_grad(spec, w, X[idx], y[idx])
            w = opt.step(w, g)
    return w
