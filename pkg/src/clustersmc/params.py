"""Dense parameter-vector arithmetic.

A weight vector is a 1-D ``float64`` numpy array. Every helper here is pure and
returns a fresh array. Sums run in ascending list order so a given sequence of
inputs always produces the same bits.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ArithmeticDomainError, ShapeError, UsageError

WeightVector = np.ndarray


def as_weights(values, *, copy: bool = True) -> WeightVector:
    """Coerce ``values`` to a finite 1-D float64 vector."""
    w = np.array(values, dtype=np.float64, copy=copy)
    if w.ndim != 1:
        raise ShapeError(f"weight vector must be 1-D, got shape {w.shape}")
    if w.size == 0:
        raise UsageError("weight vector must have positive dimension")
    if not np.all(np.isfinite(w)):
        raise ArithmeticDomainError("weight vector contains NaN or Inf")
    return w


def _check_same_dim(vs: Sequence[WeightVector]) -> int:
    dim = len(vs[0])
    for i, v in enumerate(vs):
        if np.ndim(v) != 1 or len(v) != dim:
            raise ShapeError(
                f"vector {i} has shape {np.shape(v)}, expected ({dim},)"
            )
    return dim


def scale(w: WeightVector, a: float) -> WeightVector:
    if not np.isfinite(a):
        raise ArithmeticDomainError(f"scale factor {a!r} is not finite")
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise ArithmeticDomainError("weight vector contains NaN or Inf")
    return w * float(a)


def vec_sum(vs: Sequence[WeightVector]) -> WeightVector:
    """Elementwise sum, accumulated left to right over ``vs``."""
    if len(vs) == 0:
        raise UsageError("vec_sum needs at least one vector")
    _check_same_dim(vs)
    acc = np.array(vs[0], dtype=np.float64, copy=True)
    for v in vs[1:]:
        acc += v
    return acc


def vec_mean(vs: Sequence[WeightVector]) -> WeightVector:
    return scale(vec_sum(vs), 1.0 / len(vs))


def linf_dist(a: WeightVector, b: WeightVector) -> float:
    _check_same_dim([a, b])
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def max_abs(w: WeightVector) -> float:
    return float(np.max(np.abs(w)))
