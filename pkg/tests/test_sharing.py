import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clustersmc.errors import ProtocolError, UsageError
from clustersmc.params import linf_dist, max_abs, vec_mean, vec_sum
from clustersmc.sharing import (
    MaskedSum,
    Share,
    accumulate_shares,
    make_shares,
    reconstruct_mean,
    sample_coefficients,
)


def run_cluster_smc(ws, clusters, rng, round=0):
    """Drive the sharing primitives for a full clustering; returns masked sums."""
    sums = []
    for c, roster in enumerate(clusters, start=1):
        inbox = {k: [] for k in roster}
        for i in roster:
            coeffs = sample_coefficients(len(roster), rng, owner=i, cluster=c, members=roster)
            for s in make_shares(ws[i], coeffs, round):
                inbox[s.target].append(s)
        for k in roster:
            sums.append(accumulate_shares(inbox[k], roster, cluster=c))
    return sums


def test_singleton_simplex():
    cv = sample_coefficients(1, np.random.default_rng(0))
    np.testing.assert_array_equal(cv.values, [1.0])


@pytest.mark.parametrize("n", [2, 3, 6])
def test_simplex_invariants(n):
    rng = np.random.default_rng(n)
    for _ in range(10_000):
        b = sample_coefficients(n, rng).values
        assert abs(b.sum() - 1.0) <= 1e-12
        assert np.all((b > 0) & (b < 1))


def test_simplex_coordinate_means_monte_carlo():
    rng = np.random.default_rng(99)
    draws = np.array([sample_coefficients(3, rng).values for _ in range(10_000)])
    np.testing.assert_allclose(draws.mean(axis=0), 1 / 3, atol=0.02)


def test_sample_coefficients_errors():
    with pytest.raises(UsageError):
        sample_coefficients(0, np.random.default_rng())
    with pytest.raises(UsageError):
        sample_coefficients(2, np.random.default_rng(), members=(1, 2, 3))


def test_pluggable_sampler():
    fixed = lambda n, rng: np.full(n, 1.0 / n)
    cv = sample_coefficients(4, np.random.default_rng(), sampler=fixed, members=(3, 5, 7, 9))
    assert cv.betas == {3: 0.25, 5: 0.25, 7: 0.25, 9: 0.25}
    assert cv[7] == 0.25


def test_make_shares_examples():
    one = sample_coefficients(1, np.random.default_rng(), owner=4, members=(4,))
    (s,) = make_shares(np.array([1.0, -2.0]), one, round=0)
    np.testing.assert_array_equal(s.payload, [1.0, -2.0])

    cv = sample_coefficients(2, None, owner=1, members=(1, 2), sampler=lambda n, r: np.array([0.25, 0.75]))
    shares = make_shares(np.array([2.0, 4.0]), cv, round=3)
    assert [(s.source, s.target, s.round) for s in shares] == [(1, 1, 3), (1, 2, 3)]
    np.testing.assert_array_equal(shares[0].payload, [0.5, 1.0])
    np.testing.assert_array_equal(shares[1].payload, [1.5, 3.0])
    np.testing.assert_array_equal(vec_sum([s.payload for s in shares]), [2.0, 4.0])


def test_make_shares_rejects_empty():
    with pytest.raises(UsageError):
        make_shares(np.zeros(0), sample_coefficients(2, np.random.default_rng()), 0)


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_shares_reconstruct_owner(n, seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=20) * 10
    shares = make_shares(w, sample_coefficients(n, rng), 0)
    np.testing.assert_allclose(vec_sum([s.payload for s in shares]), w, rtol=1e-12, atol=1e-12 * max_abs(w))


def test_accumulate_examples():
    w = np.array([1.0, 2.0])
    ms = accumulate_shares([Share(5, 5, 0, w)], (5,))
    np.testing.assert_array_equal(ms.payload, w)

    ms = accumulate_shares(
        [Share(2, 1, 0, np.array([1.5, 3.0])), Share(1, 1, 0, np.array([0.5, 1.0]))], (1, 2)
    )
    assert ms.holder == 1
    np.testing.assert_array_equal(ms.payload, [2.0, 4.0])


def test_accumulate_errors_name_hospital():
    p = np.ones(2)
    with pytest.raises(ProtocolError, match="duplicate share from hospital 2"):
        accumulate_shares([Share(1, 1, 0, p), Share(2, 1, 0, p), Share(2, 1, 0, p)], (1, 2))
    with pytest.raises(ProtocolError, match="missing share from hospital 3"):
        accumulate_shares([Share(1, 1, 0, p), Share(2, 1, 0, p)], (1, 2, 3))
    with pytest.raises(ProtocolError, match="mixed rounds"):
        accumulate_shares([Share(1, 1, 0, p), Share(2, 1, 1, p)], (1, 2))
    with pytest.raises(ProtocolError, match="outside its cluster"):
        accumulate_shares([Share(1, 1, 0, p), Share(4, 1, 0, p)], (1, 2))


def test_reconstruct_examples():
    w = np.array([1.0, -1.0])
    np.testing.assert_array_equal(reconstruct_mean([MaskedSum(1, 1, 0, w)], 1), w)

    rng = np.random.default_rng(1)
    ws = {1: np.array([1.0, 0.0]), 2: np.array([3.0, 2.0])}
    sums = run_cluster_smc(ws, [(1, 2)], rng)
    np.testing.assert_allclose(reconstruct_mean(sums, 2), [2.0, 1.0], rtol=1e-15, atol=1e-15)


def test_reconstruct_count_mismatch():
    with pytest.raises(ProtocolError):
        reconstruct_mean([MaskedSum(1, 1, 0, np.ones(2))], 2)


def test_reconstruct_k6_dim1000():
    rng = np.random.default_rng(6)
    ws = {k: rng.normal(size=1000) for k in range(1, 7)}
    sums = run_cluster_smc(ws, [(1, 4, 5), (2, 3, 6)], rng)
    truth = vec_mean([ws[k] for k in range(1, 7)])
    scale = max(max_abs(w) for w in ws.values())
    assert linf_dist(reconstruct_mean(sums, 6), truth) < 1e-9 * scale


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([(K, M) for K in range(1, 13) for M in range(1, K + 1) if K % M == 0]),
       st.integers(1, 1000), st.integers(0, 2**32 - 1))
def test_reconstruction_exactness_property(km, dim, seed):
    K, M = km
    rng = np.random.default_rng(seed)
    ws = {k: rng.normal(size=dim) * rng.uniform(0.1, 100) for k in range(1, K + 1)}
    perm = list(rng.permutation(K) + 1)
    N = K // M
    clusters = [tuple(sorted(int(x) for x in perm[c * N:(c + 1) * N])) for c in range(M)]
    sums = run_cluster_smc(ws, clusters, rng)
    scale = max(max_abs(w) for w in ws.values())
    assert linf_dist(reconstruct_mean(sums, K), vec_mean(list(ws.values()))) < 1e-9 * scale


def test_masked_sums_never_equal_inputs():
    rng = np.random.default_rng(123)
    for _ in range(100):
        N = int(rng.integers(2, 5))
        ws = {k: rng.normal(size=50) for k in range(1, N + 1)}
        sums = run_cluster_smc(ws, [tuple(range(1, N + 1))], rng)
        for s in sums:
            for w in ws.values():
                assert linf_dist(s.payload, w) > 1e-6 * max_abs(w)
