"""Cluster-local additive splitting of model weights.

Every hospital ``k`` in a cluster draws simplex coefficients ``beta[k, j]`` over
the cluster members, keeps ``beta[k, k] * w_k`` and sends ``beta[k, j] * w_k``
to each neighbour ``j``. Each member then holds the masked sum
``R_j = sum_i beta[i, j] * w_i``. Because every row of ``beta`` sums to one,
summing ``R_j`` over all hospitals gives ``sum_i w_i``, so the server recovers
the exact mean without seeing any individual ``w_i``.

Coefficients are plain reals, not field elements. A single share is a scalar
multiple of its source vector, so the receiving neighbour learns the direction
of ``w_i`` (but not its scale); masking here only hides the exact weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ProtocolError, UsageError
from .params import WeightVector, scale, vec_sum

#: Signature of a pluggable sampler: ``(n, rng) -> n positive reals summing to 1``.
Sampler = Callable[[int, np.random.Generator], np.ndarray]


def uniform_simplex(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw on the open ``n``-simplex via normalized unit exponentials."""
    while True:
        e = rng.standard_exponential(n)
        if np.all(e > 0):
            return e / e.sum()


@dataclass(frozen=True)
class CoefficientVector:
    owner: int
    cluster: int
    members: tuple[int, ...]
    values: np.ndarray

    @property
    def betas(self) -> dict[int, float]:
        return {j: float(b) for j, b in zip(self.members, self.values)}

    def __getitem__(self, j: int) -> float:
        return float(self.values[self.members.index(j)])


@dataclass(frozen=True)
class Share:
    source: int
    target: int
    round: int
    payload: WeightVector


@dataclass(frozen=True)
class MaskedSum:
    holder: int
    cluster: int
    round: int
    payload: WeightVector


def sample_coefficients(
    n: int,
    rng: np.random.Generator,
    *,
    owner: int = 1,
    cluster: int = 1,
    members: Sequence[int] | None = None,
    sampler: Sampler = uniform_simplex,
) -> CoefficientVector:
    """Draw ``n`` coefficients in (0, 1) summing to one.

    ``members`` labels the coefficients with hospital indices and defaults to
    ``1..n``. A one-member cluster always gets the single coefficient 1.0.
    """
    if n < 1:
        raise UsageError(f"cluster size must be >= 1, got {n}")
    members = tuple(range(1, n + 1)) if members is None else tuple(members)
    if len(members) != n:
        raise UsageError("members must list exactly n hospitals")
    values = np.ones(1) if n == 1 else np.asarray(sampler(n, rng), dtype=np.float64)
    return CoefficientVector(owner=owner, cluster=cluster, members=members, values=values)


def make_shares(w_k: WeightVector, coeffs: CoefficientVector, round: int) -> list[Share]:
    """Split ``w_k`` into one share per cluster member, the owner's own included."""
    w_k = np.asarray(w_k, dtype=np.float64)
    if w_k.ndim != 1 or w_k.size == 0:
        raise UsageError("cannot share an empty weight vector")
    return [
        Share(source=coeffs.owner, target=j, round=round, payload=scale(w_k, b))
        for j, b in zip(coeffs.members, coeffs.values)
    ]


def accumulate_shares(
    shares: Sequence[Share], members: Sequence[int], cluster: int = 1
) -> MaskedSum:
    """Sum the shares held by one hospital into its masked sum.

    ``members`` is the cluster roster; exactly one share from each member is
    required. Payloads are added in ascending source order.
    """
    if not shares:
        raise ProtocolError("no shares to accumulate")
    holders = {s.target for s in shares}
    if len(holders) != 1:
        raise ProtocolError(f"shares addressed to several holders {sorted(holders)}")
    holder = holders.pop()
    rounds = {s.round for s in shares}
    if len(rounds) != 1:
        raise ProtocolError(f"hospital {holder}: shares from mixed rounds {sorted(rounds)}")

    by_source: dict[int, Share] = {}
    for s in shares:
        if s.source in by_source:
            raise ProtocolError(f"hospital {holder}: duplicate share from hospital {s.source}")
        if s.source not in members:
            raise ProtocolError(
                f"hospital {holder}: share from hospital {s.source} outside its cluster"
            )
        by_source[s.source] = s
    for m in members:
        if m not in by_source:
            raise ProtocolError(f"hospital {holder}: missing share from hospital {m}")

    ordered = [by_source[i].payload for i in sorted(by_source)]
    return MaskedSum(holder=holder, cluster=cluster, round=rounds.pop(), payload=vec_sum(ordered))


def reconstruct_mean(sums: Sequence[MaskedSum], K: int) -> WeightVector:
    """Server-side average of all masked sums, which equals the mean of the raw weights."""
    if len(sums) != K:
        raise ProtocolError(f"expected {K} masked sums, got {len(sums)}")
    holders = [s.holder for s in sums]
    if len(set(holders)) != K:
        raise ProtocolError(f"duplicate masked sums from hospitals {sorted(holders)}")
    if len({s.round for s in sums}) != 1:
        raise ProtocolError("masked sums from mixed rounds")
    ordered = sorted(sums, key=lambda s: s.holder)
    return scale(vec_sum([s.payload for s in ordered]), 1.0 / K)
